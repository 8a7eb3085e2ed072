//! Fixtures shared by the criterion benches.

use archgrad_core::diffcore::Tensor;
use archgrad_core::estimators::BilevelState;
use archgrad_core::rng::Rng64;
use archgrad_core::supernet::{ArchParams, ArchTrainable, Batch, SuperNet, SuperNetConfig, SupernetObjective};

/// Default super-network with random train/val batches.
pub struct Fixture {
    pub net: SuperNet,
    pub base: ArchParams,
    pub train: Batch,
    pub val: Batch,
    pub omega: Vec<f64>,
}

fn batch(rng: &mut Rng64, n: usize, dim: usize) -> Batch {
    Batch {
        x: Tensor::matrix(n, dim, rng.normal_vec(n * dim, 1.0)).expect("shape"),
        labels: (0..n).map(|i| i % 2).collect(),
    }
}

impl Fixture {
    pub fn new(batch_size: usize) -> Self {
        let net = SuperNet::new(SuperNetConfig::default()).expect("default config");
        let mut rng = Rng64::new(7);
        let dim = net.config().input_dim;
        Self {
            base: net.init_arch(),
            train: batch(&mut rng, batch_size, dim),
            val: batch(&mut rng, batch_size, dim),
            omega: net.init_omega(&mut rng),
            net,
        }
    }

    pub fn objective(&self) -> SupernetObjective<'_> {
        SupernetObjective {
            net: &self.net,
            base: self.base.clone(),
            trainable: ArchTrainable::Operators,
            train: &self.train,
            val: &self.val,
            weight_decay: 3e-4,
        }
    }

    pub fn state(&self) -> BilevelState {
        BilevelState::new(self.omega.clone(), self.base.flatten(ArchTrainable::Operators))
    }
}
