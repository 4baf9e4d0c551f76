//! One learner = model + optimiser + its own replay sampler.

use super::buffer::{PrioritySampler, TransitionStore};
use super::config::DynamicsConfig;
use super::encode::{encode_batch, mixup_batch, EncodedBatch};
use super::loss::{log_likelihoods, nll_from, penalty_from, per_record_nll, underflow_count};
use super::model::DynamicsModel;
use super::DynamicsError;
use crate::factored::{FactorSchema, TransitionRecord};
use crate::scalar::Scalar;
use crate::tensorcore::{Adam, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What one training step did.
#[derive(Clone, Debug, PartialEq)]
pub struct LossComponents {
    pub batch_index: u64,
    pub nll: f64,
    /// `None` while the annealed weight is still zero (the penalty is not computed).
    pub penalty: Option<f64>,
    pub lambda_eff: f64,
    pub mean_priority: f64,
    /// The update was rejected because the loss or a gradient was non-finite.
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainIncidents {
    pub skipped_steps: u64,
    pub prob_underflows: u64,
}

#[derive(Clone, Debug)]
pub struct Learner<T> {
    pub model: DynamicsModel<T>,
    pub sampler: PrioritySampler,
    adam: Adam<T>,
    config: DynamicsConfig,
    rng: ChaCha8Rng,
    batches: u64,
    incidents: TrainIncidents,
}

impl<T: Scalar> Learner<T> {
    /// Initialises the model from `seed`; sampling randomness is derived from the same seed.
    pub fn new(schema: FactorSchema, config: DynamicsConfig, seed: u64) -> Result<Self, DynamicsError> {
        config.validate().map_err(DynamicsError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DynamicsModel::new(schema, config.arch.clone(), &mut rng)?;
        let sampler = match config.priority_exponent {
            Some(a) => PrioritySampler::prioritized(config.buffer_capacity, a),
            None => PrioritySampler::uniform(config.buffer_capacity),
        };
        let adam = Adam::new(model.params(), config.lr);
        Ok(Self {
            model,
            sampler,
            adam,
            config,
            rng,
            batches: 0,
            incidents: TrainIncidents::default(),
        })
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.config
    }

    /// Number of training batches consumed so far (the annealing clock).
    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn incidents(&self) -> &TrainIncidents {
        &self.incidents
    }

    /// Registers a record just written to the shared store.
    pub fn on_insert(&mut self, slot: usize) {
        self.sampler.on_insert(slot);
    }

    /// Samples a batch from `store` through this learner's sampler and trains on it.
    pub fn train_step(&mut self, store: &TransitionStore) -> Result<LossComponents, DynamicsError> {
        if store.is_empty() {
            return Err(DynamicsError::EmptyBuffer);
        }
        let slots = self.sampler.sample(self.config.batch_size, &mut self.rng);
        let records: Vec<&TransitionRecord> = slots.iter().map(|&s| store.get(s)).collect();
        let batch = encode_batch(self.model.schema(), &records)?;
        let mut out = self.step_on(&batch)?;
        if self.sampler.is_prioritized() {
            for (&slot, nll) in slots.iter().zip(per_record_nll(&self.model, &batch)?) {
                self.sampler.update(slot, nll);
            }
        }
        out.mean_priority = self.sampler.mean_priority();
        Ok(out)
    }

    /// Trains on explicit records, bypassing the sampler.
    pub fn train_on(&mut self, records: &[&TransitionRecord]) -> Result<LossComponents, DynamicsError> {
        let batch = encode_batch(self.model.schema(), records)?;
        self.step_on(&batch)
    }

    fn step_on(&mut self, batch: &EncodedBatch<T>) -> Result<LossComponents, DynamicsError> {
        let batch_index = self.batches;
        self.batches += 1;
        let lambda_eff = self.config.lambda_at(batch_index);
        let mixed;
        let train_batch = match self.config.mixup_alpha {
            Some(alpha) if self.model.schema().is_discrete() && batch.len >= 2 => {
                mixed = mixup_batch(batch, alpha, &mut self.rng)?;
                &mixed
            }
            _ => batch,
        };
        let mask = self.dropout_mask(train_batch.len)?;

        let tape = Tape::new();
        let p = self.model.params().bind(&tape);
        let xs: Vec<_> = train_batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let fwd = self.model.forward(&p, &xs, mask.as_ref())?;
        self.incidents.prob_underflows += underflow_count(&fwd, &train_batch.targets);
        let lls = log_likelihoods(&fwd, &train_batch.targets)?;
        let (nll, _) = nll_from(&lls)?;
        let mut total = nll;
        let mut penalty = None;
        if lambda_eff > 0.0 {
            let pen = penalty_from(&tape, &lls, &xs)?;
            self.model.counters().add_backward((train_batch.len * lls.len()) as u64);
            penalty = Some(pen.item().to_f64_lossy());
            total = total.add(pen.scale(T::of(lambda_eff)))?;
        }
        let nll_v = nll.item().to_f64_lossy();
        let mut skipped = !total.item().is_finite();
        if !skipped {
            let grads = tape.grad_values(total, p.vars())?;
            skipped = !self.adam.step(self.model.params_mut(), &grads);
        }
        if skipped {
            self.incidents.skipped_steps += 1;
        }
        Ok(LossComponents {
            batch_index,
            nll: nll_v,
            penalty,
            lambda_eff,
            mean_priority: self.sampler.mean_priority(),
            skipped,
        })
    }

    /// `[B, N+1]` keep-mask: with probability `feature_dropout` a sample loses
    /// one uniformly chosen input feature.
    fn dropout_mask(&mut self, b: usize) -> Result<Option<Tensor<T>>, DynamicsError> {
        let pdrop = self.config.feature_dropout;
        if pdrop <= 0.0 {
            return Ok(None);
        }
        let l = self.model.schema().n_inputs();
        let mut m = vec![T::one(); b * l];
        for r in 0..b {
            if self.rng.random::<f64>() < pdrop {
                m[r * l + self.rng.random_range(0..l)] = T::zero();
            }
        }
        Ok(Some(Tensor::new(vec![b, l], m)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::config::ArchConfig;
    use crate::factored::{EdgeMask, Factor, FactoredState};

    fn small() -> DynamicsConfig {
        DynamicsConfig {
            arch: ArchConfig {
                extractor_hidden: vec![16],
                heads: 2,
                head_dim: 4,
                attn_out: 16,
                post_attn: vec![16],
            },
            lr: 3e-3,
            buffer_capacity: 512,
            ..DynamicsConfig::default()
        }
    }

    fn copy_store(n: usize) -> (FactorSchema, TransitionStore) {
        let schema = FactorSchema::new(vec![Factor::categorical("a", 3), Factor::categorical("b", 3)], 2).unwrap();
        let mut store = TransitionStore::new(512);
        for k in 0..n {
            let s = FactoredState(vec![(k % 3) as f64, ((k / 3) % 3) as f64]);
            store.push(TransitionRecord {
                state: s.clone(),
                action: k % 2,
                next: s,
                reward: 0.0,
                done: false,
                graph: EdgeMask::empty(2),
                stage: 0,
            });
        }
        (schema, store)
    }

    #[test]
    fn penalty_only_after_anneal_start() {
        let (schema, store) = copy_store(18);
        let cfg = DynamicsConfig {
            anneal_start: 2,
            anneal_end: 4,
            ..small()
        };
        let mut l = Learner::<f64>::new(schema, cfg, 0).unwrap();
        for k in 0..store.len() {
            l.on_insert(k);
        }
        let steps: Vec<_> = (0..5).map(|_| l.train_step(&store).unwrap()).collect();
        assert_eq!(steps[0].lambda_eff, 0.0);
        assert!(steps[0].penalty.is_none() && steps[2].penalty.is_none());
        assert_eq!(steps[3].lambda_eff, 0.5e-3);
        assert!(steps[3].penalty.is_some());
        assert_eq!(steps[4].lambda_eff, 1e-3);
    }

    #[test]
    fn priorities_are_post_update_nll() {
        let (schema, store) = copy_store(9);
        let mut l = Learner::<f64>::new(schema.clone(), small(), 3).unwrap();
        for k in 0..store.len() {
            l.on_insert(k);
        }
        l.train_step(&store).unwrap();
        for slot in 0..store.len() {
            let batch = encode_batch(&schema, &[store.get(slot)]).unwrap();
            let fresh = per_record_nll(&l.model, &batch).unwrap()[0];
            let pr = l.sampler.priority(slot);
            // untouched slots keep the initial max priority of 1
            assert!((pr - fresh).abs() < 1e-12 || pr == 1.0, "slot {slot}: {pr} vs {fresh}");
        }
    }

    #[test]
    fn empty_store_is_an_error() {
        let (schema, _) = copy_store(0);
        let mut l = Learner::<f64>::new(schema, small(), 0).unwrap();
        assert!(matches!(l.train_step(&TransitionStore::new(4)), Err(DynamicsError::EmptyBuffer)));
    }

    #[test]
    fn identical_seeds_train_identically() {
        let (schema, store) = copy_store(20);
        let run = || {
            let mut l = Learner::<f64>::new(schema.clone(), small(), 42).unwrap();
            for k in 0..store.len() {
                l.on_insert(k);
            }
            (0..3).map(|_| l.train_step(&store).unwrap().nll).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
