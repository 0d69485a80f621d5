//! History of generated images for discriminator updates.

use inspex_autodiff::Tensor;
use rand::Rng;

/// Holds up to `capacity` past fakes. Each query image is either returned
/// as-is or, with probability one half once the pool is full, swapped for a
/// stored one.
#[derive(Clone, Debug)]
pub struct ReplayPool {
    capacity: usize,
    images: Vec<Tensor<f32>>,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            images: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Per-image query for a `[1, 1, h, w]` tensor.
    pub fn query<R: Rng>(&mut self, image: Tensor<f32>, rng: &mut R) -> Tensor<f32> {
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(0..self.capacity);
            std::mem::replace(&mut self.images[k], image)
        } else {
            image
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fills_then_mixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ReplayPool::new(3);
        for i in 0..3 {
            let t = Tensor::full(&[1, 1, 1, 1], i as f32);
            assert_eq!(p.query(t.clone(), &mut rng), t);
        }
        assert_eq!(p.len(), 3);
        let mut swapped = 0;
        for i in 3..200 {
            let t = Tensor::full(&[1, 1, 1, 1], i as f32);
            if p.query(t.clone(), &mut rng) != t {
                swapped += 1;
            }
        }
        assert!(swapped > 60 && swapped < 140, "{swapped}");
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn disabled_pool_is_a_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ReplayPool::new(0);
        let t = Tensor::full(&[1, 1, 2, 2], 0.5);
        assert_eq!(p.query(t.clone(), &mut rng), t);
        assert!(p.is_empty());
    }
}
