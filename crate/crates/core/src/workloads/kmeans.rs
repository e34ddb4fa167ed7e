//! Lloyd's K-means, serial and block-parallel.
//!
//! The parallel version gives each worker a contiguous block of points. Per
//! iteration a worker assigns its points, accumulates per-cluster partial sums,
//! publishes them at a barrier and then recomputes every centroid itself from
//! all partials (replicated update). Partials are always combined in worker
//! order, so one worker reproduces the serial result bit for bit.

use std::sync::{Barrier, Mutex};

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{check_workers, partition, pin_current_worker, stream_rng, WorkloadError};
use crate::measurement::{RunHandle, RunRecord};

const DATASET_STREAM: u64 = 0xda7a;
const INIT_STREAM: u64 = 0x1417;
const BLOB_STD: f64 = 1.0;
const MIN_CENTER_SEPARATION: f64 = 6.0 * BLOB_STD;
const CENTER_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSpec {
    #[serde(default)]
    pub n_points: usize,
    #[serde(default = "default_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub convergence_epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clusters() -> usize {
    1024
}

fn default_dims() -> usize {
    8
}

fn default_iterations() -> usize {
    10
}

impl KMeansSpec {
    pub fn new(n_points: usize, n_clusters: usize, dims: usize, seed: u64) -> Self {
        Self {
            n_points,
            n_clusters,
            dims,
            max_iterations: default_iterations(),
            convergence_epsilon: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_owned()));
        if self.n_clusters == 0 {
            return bad("n_clusters must be positive");
        }
        if self.n_points < self.n_clusters {
            return bad("n_points must be at least n_clusters");
        }
        if self.dims == 0 {
            return bad("dims must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if self.convergence_epsilon.is_nan() || self.convergence_epsilon < 0.0 {
            return bad("convergence_epsilon must be nonnegative");
        }
        Ok(())
    }
}

/// Row-major point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: usize,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn from_points(dims: usize, points: &[&[f64]]) -> Self {
        let values = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self { dims, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }
}

/// `n_clusters` Gaussian blobs with unit spread; point `i` is drawn from blob
/// `i mod n_clusters`.
pub fn generate_dataset(spec: &KMeansSpec) -> Dataset {
    let mut rng = stream_rng(spec.seed, DATASET_STREAM);
    let dims = spec.dims;
    let k = spec.n_clusters;
    // Box wide enough that centers are ~16 apart on average.
    let half_width = 8.0 * (k as f64).powf(1.0 / dims as f64);
    let coord = Uniform::new(-half_width, half_width).expect("valid range");
    let mut centers: Vec<f64> = Vec::with_capacity(k * dims);
    for c in 0..k {
        let mut candidate = vec![0.0; dims];
        for _ in 0..CENTER_ATTEMPTS {
            candidate.iter_mut().for_each(|x| *x = coord.sample(&mut rng));
            let separated = (0..c).all(|o| {
                sq_dist(&candidate, &centers[o * dims..(o + 1) * dims])
                    >= MIN_CENTER_SEPARATION * MIN_CENTER_SEPARATION
            });
            if separated {
                break;
            }
        }
        centers.extend_from_slice(&candidate);
    }

    let noise = Normal::new(0.0, BLOB_STD).expect("valid std");
    let mut values = Vec::with_capacity(spec.n_points * dims);
    for i in 0..spec.n_points {
        let blob = i % k;
        for d in 0..dims {
            values.push(centers[blob * dims + d] + noise.sample(&mut rng));
        }
    }
    Dataset { dims, values }
}

/// `k` distinct data points chosen uniformly without replacement.
pub fn initial_centroids(spec: &KMeansSpec, data: &Dataset) -> Vec<f64> {
    let mut rng = stream_rng(spec.seed, INIT_STREAM);
    rand::seq::index::sample(&mut rng, data.len(), spec.n_clusters)
        .into_iter()
        .flat_map(|i| data.point(i).iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid (lowest index on ties) and its squared
/// distance.
fn nearest(point: &[f64], centroids: &[f64], dims: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dims).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Assigns every point of `block` and returns the summed squared distance.
fn assign_block(block: &[f64], dims: usize, centroids: &[f64], out: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (point, slot) in block.chunks_exact(dims).zip(out.iter_mut()) {
        let (c, d) = nearest(point, centroids, dims);
        *slot = c;
        objective += d;
    }
    objective
}

#[derive(Debug, Clone, Default)]
struct Partial {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

fn accumulate(block: &[f64], dims: usize, k: usize, assignments: &[usize]) -> Partial {
    let mut partial = Partial {
        sums: vec![0.0; k * dims],
        counts: vec![0; k],
    };
    for (point, &c) in block.chunks_exact(dims).zip(assignments) {
        partial.counts[c] += 1;
        for (s, x) in partial.sums[c * dims..(c + 1) * dims].iter_mut().zip(point) {
            *s += x;
        }
    }
    partial
}

/// Combines partials in the given order into new centroids. Empty clusters
/// keep their position. Returns the largest centroid displacement.
fn update(partials: &[Partial], centroids: &mut [f64], dims: usize, k: usize) -> f64 {
    let mut sums = vec![0.0; k * dims];
    let mut counts = vec![0u64; k];
    for p in partials {
        for (s, x) in sums.iter_mut().zip(&p.sums) {
            *s += x;
        }
        for (n, m) in counts.iter_mut().zip(&p.counts) {
            *n += m;
        }
    }
    let mut max_shift: f64 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let old = &mut centroids[c * dims..(c + 1) * dims];
        let mut shift = 0.0;
        for (o, s) in old.iter_mut().zip(&sums[c * dims..(c + 1) * dims]) {
            let new = s / counts[c] as f64;
            shift += (new - *o) * (new - *o);
            *o = new;
        }
        max_shift = max_shift.max(shift.sqrt());
    }
    max_shift
}

fn check_data(spec: &KMeansSpec, data: &Dataset) -> Result<(), WorkloadError> {
    spec.validate()?;
    let expected = spec.n_points * spec.dims;
    if data.dims != spec.dims || data.values.len() != expected {
        return Err(WorkloadError::DatasetMismatch {
            got: data.values.len(),
            expected,
        });
    }
    Ok(())
}

/// Serial Lloyd iterations. Also returns the objective measured in each
/// assignment pass.
pub fn kmeans_serial_traced(
    spec: &KMeansSpec,
    data: &Dataset,
) -> Result<(KMeansResult, Vec<f64>), WorkloadError> {
    check_data(spec, data)?;
    let (dims, k) = (spec.dims, spec.n_clusters);
    let mut centroids = initial_centroids(spec, data);
    let mut assignments = vec![0; data.len()];
    let mut objectives = Vec::new();
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        iterations += 1;
        objectives.push(assign_block(&data.values, dims, &centroids, &mut assignments));
        let partial = accumulate(&data.values, dims, k, &assignments);
        let shift = update(std::slice::from_ref(&partial), &mut centroids, dims, k);
        if shift < spec.convergence_epsilon {
            break;
        }
    }
    Ok((
        KMeansResult {
            centroids,
            assignments,
            iterations,
        },
        objectives,
    ))
}

pub fn kmeans_serial(spec: &KMeansSpec, data: &Dataset) -> Result<KMeansResult, WorkloadError> {
    kmeans_serial_traced(spec, data).map(|(r, _)| r)
}

/// What a worker thread returns: worker 0 reports the final centroids and
/// iteration count, the others report `None`.
type WorkerOutcome = Result<Option<(Vec<f64>, usize)>, WorkloadError>;

/// Block-parallel Lloyd iterations on `workers` threads, instrumented on
/// `handle`. The handle is finished when the last iteration completes.
pub fn kmeans_parallel(
    spec: &KMeansSpec,
    data: &Dataset,
    workers: usize,
    handle: RunHandle,
) -> Result<(KMeansResult, RunRecord), WorkloadError> {
    check_data(spec, data)?;
    check_workers(workers, &handle)?;
    let n = data.len();
    if workers > n {
        return Err(WorkloadError::UnderfilledPartition { workers, items: n });
    }
    let (dims, k) = (spec.dims, spec.n_clusters);
    let ranges = partition(n, workers);
    let init = initial_centroids(spec, data);
    let mut assignments = vec![0usize; n];

    let barrier = Barrier::new(workers);
    let slots: Vec<Mutex<Partial>> = (0..workers).map(|_| Mutex::default()).collect();
    let handle_ref = &handle;

    let outcomes: Vec<WorkerOutcome> =
        std::thread::scope(|scope| {
            let mut rest = assignments.as_mut_slice();
            let mut joins = Vec::with_capacity(workers);
            for (w, range) in ranges.iter().enumerate() {
                let (mine, tail) = rest.split_at_mut(range.len());
                rest = tail;
                let block = &data.values[range.start * dims..range.end * dims];
                let (barrier, slots, init) = (&barrier, &slots, &init);
                joins.push(scope.spawn(move || {
                    pin_current_worker(w);
                    let mut centroids = init.clone();
                    let mut iterations = 0;
                    while iterations < spec.max_iterations {
                        iterations += 1;
                        handle_ref.timed(w, "assign", || {
                            assign_block(block, dims, &centroids, mine);
                        })?;
                        let partial =
                            handle_ref.timed(w, "partial_sums", || accumulate(block, dims, k, mine))?;
                        *slots[w].lock().expect("slot poisoned") = partial;
                        barrier.wait();
                        let all: Vec<Partial> = slots
                            .iter()
                            .map(|s| s.lock().expect("slot poisoned").clone())
                            .collect();
                        barrier.wait();
                        let shift =
                            handle_ref.timed(w, "update", || update(&all, &mut centroids, dims, k))?;
                        if shift < spec.convergence_epsilon {
                            break;
                        }
                    }
                    Ok((w == 0).then_some((centroids, iterations)))
                }));
            }
            joins
                .into_iter()
                .map(|j| j.join().expect("kmeans worker panicked"))
                .collect()
        });

    let mut lead = None;
    for outcome in outcomes {
        if let Some(r) = outcome? {
            lead = Some(r);
        }
    }
    let (centroids, iterations) = lead.expect("worker 0 reports centroids");
    handle.set_iterations(iterations as u64);
    let record = handle.finish()?;
    Ok((
        KMeansResult {
            centroids,
            assignments,
            iterations,
        },
        record,
    ))
}
