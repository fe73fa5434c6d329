use ndistill::data::{gen_synthetic, grating_template, Split, SyntheticSpec};

/// Nearest noise-free template by Euclidean distance.
fn nearest_template(image: &[f32], templates: &[Vec<f32>]) -> usize {
    let dist = |t: &Vec<f32>| -> f64 {
        t.iter()
            .zip(image)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum()
    };
    (0..templates.len())
        .min_by(|&a, &b| {
            dist(&templates[a])
                .partial_cmp(&dist(&templates[b]))
                .unwrap()
        })
        .unwrap()
}

#[test]
fn template_matching_separates_low_noise_data() {
    for noise in [0.2, 0.3] {
        let spec = SyntheticSpec {
            n_per_class: 50,
            classes: 10,
            channels: 3,
            height: 12,
            width: 12,
            noise_level: noise,
        };
        let d = gen_synthetic(&spec, Split::Test, 11).unwrap();
        let templates: Vec<Vec<f32>> = (0..10)
            .map(|c| grating_template(c, 3, 12, 12).into_data())
            .collect();
        let correct = (0..d.len())
            .filter(|&i| nearest_template(d.images.row(i), &templates) == d.labels[i])
            .count();
        let acc = 100.0 * correct as f64 / d.len() as f64;
        assert!(acc > 95.0, "noise {noise}: {acc}");
    }
}
