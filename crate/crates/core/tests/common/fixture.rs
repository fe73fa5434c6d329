//! A small trained mini-resnet8 teacher shared by integration tests.

use std::sync::OnceLock;

use ndistill::data::{gen_synthetic, standardize, Dataset, Split, SyntheticSpec};
use ndistill::distill::{train_supervised, LrSchedule, TrainConfig};
use ndistill::network::{build_resnet, Model, Preset};
use ndistill::rng::Rng;

pub struct Fixture {
    pub teacher: Model,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn cfg(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 32,
        lr: LrSchedule::Constant { lr },
        momentum: 0.9,
        weight_decay: 0.0,
        augment_shift: 0,
    }
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = SyntheticSpec {
            n_per_class: 60,
            classes: 10,
            channels: 3,
            height: 12,
            width: 12,
            noise_level: 1.0,
        };
        let (train, stats) =
            standardize(&gen_synthetic(&spec, Split::Train, 1).unwrap(), None).unwrap();
        let test_spec = SyntheticSpec {
            n_per_class: 20,
            ..spec
        };
        let (test, _) = standardize(
            &gen_synthetic(&test_spec, Split::Test, 1).unwrap(),
            Some(&stats),
        )
        .unwrap();
        let net = build_resnet(Preset::MiniResnet8, &[8, 16, 16], 10, None).unwrap();
        let mut teacher = Model::init(net, &mut Rng::new(5)).unwrap();
        train_supervised(&mut teacher, &train, &cfg(150, 0.05), 0.0, &Rng::new(6)).unwrap();
        teacher.params.reset_optimizer_state();
        Fixture {
            teacher,
            train,
            test,
        }
    })
}
