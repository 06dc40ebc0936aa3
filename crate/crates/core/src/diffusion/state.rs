use crate::error::{Error, Result};

/// A point of the reverse process: values in R^d at timestep `t`
/// (`0` is clean, `T` is the pure-noise end).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub t: usize,
}

impl StateVector {
    pub fn new(values: Vec<f64>, t: usize) -> Self {
        Self { values, t }
    }

    pub fn clean(values: Vec<f64>) -> Self {
        Self { values, t: 0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `N` concurrent trajectories at a shared timestep, each tagged with the
/// id of the random substream its future noise is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    t: usize,
    particles: Vec<StateVector>,
    substream_ids: Vec<u64>,
}

impl ParticleSet {
    pub fn new(particles: Vec<StateVector>, substream_ids: Vec<u64>) -> Result<Self> {
        if particles.len() != substream_ids.len() {
            return Err(Error::invalid(format!(
                "{} particles but {} substream ids",
                particles.len(),
                substream_ids.len()
            )));
        }
        let t = particles.first().map_or(0, |p| p.t);
        if particles.iter().any(|p| p.t != t) {
            return Err(Error::invalid("particles must share one timestep"));
        }
        let mut sorted = substream_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("substream ids must be unique"));
        }
        Ok(Self {
            t,
            particles,
            substream_ids,
        })
    }

    /// Particles with slot ids `0..n`.
    pub fn from_values(t: usize, values: Vec<Vec<f64>>) -> Self {
        let ids = (0..values.len() as u64).collect();
        let particles = values.into_iter().map(|v| StateVector::new(v, t)).collect();
        Self {
            t,
            particles,
            substream_ids: ids,
        }
    }

    pub fn empty(t: usize) -> Self {
        Self {
            t,
            particles: Vec::new(),
            substream_ids: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[StateVector] {
        &self.particles
    }

    pub fn particle(&self, i: usize) -> &StateVector {
        &self.particles[i]
    }

    pub fn substream_ids(&self) -> &[u64] {
        &self.substream_ids
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.particles.iter().map(|p| p.values.clone()).collect()
    }

    pub(crate) fn particles_mut(&mut self) -> &mut [StateVector] {
        &mut self.particles
    }

    /// Replaces all particles; they must already sit at `t`.
    pub(crate) fn replace(&mut self, t: usize, particles: Vec<StateVector>) {
        debug_assert!(particles.iter().all(|p| p.t == t));
        debug_assert_eq!(particles.len(), self.substream_ids.len());
        self.t = t;
        self.particles = particles;
    }

    /// New set made of copies of the listed particles, in order, with slot ids.
    pub fn gather(&self, indices: &[usize]) -> ParticleSet {
        let particles: Vec<StateVector> = indices.iter().map(|&i| self.particles[i].clone()).collect();
        let ids = (0..particles.len() as u64).collect();
        ParticleSet {
            t: self.t,
            particles,
            substream_ids: ids,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mixed_timesteps_and_duplicate_ids() {
        let a = StateVector::new(vec![0.0], 3);
        let b = StateVector::new(vec![1.0], 2);
        assert!(ParticleSet::new(vec![a.clone(), b], vec![0, 1]).is_err());
        assert!(ParticleSet::new(vec![a.clone(), a.clone()], vec![4, 4]).is_err());
        assert!(ParticleSet::new(vec![a.clone()], vec![0, 1]).is_err());
        assert!(ParticleSet::new(vec![a.clone(), a], vec![4, 9]).is_ok());
    }

    #[test]
    fn gather_assigns_slot_ids() {
        let set = ParticleSet::from_values(5, vec![vec![1.0], vec![2.0], vec![3.0]]);
        let g = set.gather(&[2, 2, 0, 2]);
        assert_eq!(g.substream_ids(), &[0, 1, 2, 3]);
        assert_eq!(g.values(), vec![vec![3.0], vec![3.0], vec![1.0], vec![3.0]]);
        assert_eq!(g.t(), 5);
    }
}
