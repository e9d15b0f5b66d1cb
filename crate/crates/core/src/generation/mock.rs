//! Procedural stand-in for the text-to-3D service.

use std::collections::HashSet;
use std::f32::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wire::PointCloud;
use super::{GenError, GenerationService};
use crate::clients::stable_digest;

fn signed_pow(x: f32, e: f32) -> f32 {
    x.signum() * x.abs().powf(e)
}

/// Superquadric surface plus jitter. Shape exponents, axis scales, and the base
/// color all come from `hash(prompt, seed)`, so the same inputs always produce
/// byte-identical clouds.
pub fn mock_generate(prompt: &str, seed: u64, point_count: usize) -> PointCloud {
    let digest = stable_digest(&[b"cloud", &seed.to_le_bytes(), prompt.as_bytes()]);
    let mut rng = ChaCha8Rng::from_seed(digest);
    let e1: f32 = rng.random_range(0.3..2.0);
    let e2: f32 = rng.random_range(0.3..2.0);
    let scale: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.4..0.95));
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(40.0..215.0));
    let noise = 0.03f32;

    let mut points = Vec::with_capacity(point_count);
    let mut colors = Vec::with_capacity(point_count);
    for _ in 0..point_count {
        let eta: f32 = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
        let omega: f32 = rng.random_range(-PI..PI);
        let ce = signed_pow(eta.cos(), e1);
        let p = [
            scale[0] * ce * signed_pow(omega.cos(), e2),
            scale[1] * ce * signed_pow(omega.sin(), e2),
            scale[2] * signed_pow(eta.sin(), e1),
        ];
        let p = p.map(|c| (c + rng.random_range(-noise..noise)).clamp(-1.0, 1.0));
        // Brighten toward the top of the shape.
        let shade = 0.75 + 0.25 * p[2];
        colors.push(base.map(|c| (c * shade + 20.0).clamp(0.0, 255.0) as u8));
        points.push(p);
    }
    PointCloud {
        points,
        colors,
        prompt: prompt.to_owned(),
    }
}

/// In-process generation service backed by [`mock_generate`], with an optional
/// artificial latency and a log of every prompt it received.
#[derive(Debug)]
pub struct MockGenerationService {
    pub seed: u64,
    pub point_count: usize,
    pub delay: Duration,
    failing_prompts: HashSet<String>,
    calls: AtomicUsize,
    received: Mutex<Vec<String>>,
}

impl MockGenerationService {
    pub fn new(seed: u64, point_count: usize) -> Self {
        Self {
            seed,
            point_count,
            delay: Duration::ZERO,
            failing_prompts: HashSet::new(),
            calls: AtomicUsize::new(0),
            received: Mutex::new(Vec::new()),
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Requests for this prompt fail with a service error.
    pub fn failing_on(mut self, prompt: &str) -> Self {
        self.failing_prompts.insert(prompt.to_owned());
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn received(&self) -> Vec<String> {
        self.received.lock().unwrap().clone()
    }
}

#[async_trait]
impl GenerationService for MockGenerationService {
    async fn generate(&self, prompt: &str) -> Result<PointCloud, GenError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.received.lock().unwrap().push(prompt.to_owned());
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        if self.failing_prompts.contains(prompt) {
            return Err(GenError::Service(format!("mock failure for {prompt:?}")));
        }
        Ok(mock_generate(prompt, self.seed, self.point_count))
    }
}
