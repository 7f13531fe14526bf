use crate::bc::BcPolicy;
use crate::diffuser::Denoiser;
use crate::error::Result;
use crate::numkit::Matrix;
use crate::rng::{self, Rng};
use crate::trainer::GeneratorPolicy;
use crate::trajkit::{ConditionSpec, WindowShape};

/// Sequential network calls (`nfe`) and total batch rows pushed through the
/// network (`bef`). Backends record into it inside their sequential loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardCounter {
    pub nfe: u64,
    pub bef: u64,
}

impl ForwardCounter {
    /// One sequential forward over `batch` rows.
    pub fn record(&mut self, batch: usize) {
        self.nfe += 1;
        self.bef += batch as u64;
    }
}

/// Anything that can propose `k` clamped raw-unit windows for a condition.
pub trait PlanningBackend: Sync {
    fn name(&self) -> &'static str;

    fn shape(&self) -> WindowShape;

    /// Sequential denoising steps (1 for one-step backends).
    fn steps(&self) -> usize {
        1
    }

    /// Batch rows per candidate in one forward.
    fn batch_factor(&self) -> usize {
        1
    }

    /// `k × H·D` raw windows, all satisfying `spec`.
    fn generate(&self, spec: &ConditionSpec, k: usize, rng: &mut Rng, counter: &mut ForwardCounter) -> Result<Matrix>;
}

impl PlanningBackend for GeneratorPolicy {
    fn name(&self) -> &'static str {
        "kdp"
    }

    fn shape(&self) -> WindowShape {
        GeneratorPolicy::shape(self)
    }

    fn generate(&self, spec: &ConditionSpec, k: usize, rng: &mut Rng, counter: &mut ForwardCounter) -> Result<Matrix> {
        let mut noise = Matrix::zeros(k, self.noise_dim());
        rng::fill_normal(rng, noise.as_mut_slice());
        let specs = vec![spec.clone(); k];
        let out = GeneratorPolicy::generate(self, &specs, &noise)?;
        counter.record(k * self.batch_factor());
        Ok(out)
    }
}

impl PlanningBackend for Denoiser {
    fn name(&self) -> &'static str {
        "diffuser"
    }

    fn shape(&self) -> WindowShape {
        Denoiser::shape(self)
    }

    fn steps(&self) -> usize {
        self.schedule().steps()
    }

    fn generate(&self, spec: &ConditionSpec, k: usize, rng: &mut Rng, counter: &mut ForwardCounter) -> Result<Matrix> {
        self.sample(spec, k, rng, counter)
    }
}

impl PlanningBackend for BcPolicy {
    fn name(&self) -> &'static str {
        "bc"
    }

    fn shape(&self) -> WindowShape {
        BcPolicy::shape(self)
    }

    fn generate(&self, spec: &ConditionSpec, k: usize, _rng: &mut Rng, counter: &mut ForwardCounter) -> Result<Matrix> {
        let out = BcPolicy::generate(self, &vec![spec.clone(); k])?;
        counter.record(k);
        Ok(out)
    }
}
