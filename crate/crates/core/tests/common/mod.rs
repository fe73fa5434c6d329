#[allow(dead_code)]
pub mod fixture;
#[allow(dead_code)]
pub mod gradcases;
