//! Scaling benchmark: wall clock and allocation high-water of the
//! per-subgroup reasoning passes as crowd size grows.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Serialize;

use crate::diffcore::Graph;
use crate::model::Model;
use crate::scenegen::{generate_scene_with, GenConfig};

use super::partition::partition_subgroups;
use super::TrainError;

/// Allocation high-water meter for the stage under test.
pub trait MemProbe {
    /// Marks the current live footprint as the new baseline.
    fn reset(&self);
    /// Peak live bytes above the baseline since the last reset.
    fn peak_delta_bytes(&self) -> u64;
}

static LIVE_BYTES: AtomicU64 = AtomicU64::new(0);
static PEAK_BYTES: AtomicU64 = AtomicU64::new(0);
static BASE_BYTES: AtomicU64 = AtomicU64::new(0);

/// System-allocator wrapper counting live bytes. Binaries that want memory
/// rows install it:
///
/// ```ignore
/// #[global_allocator]
/// static ALLOC: comhr::harness::CountingAlloc = comhr::harness::CountingAlloc;
/// ```
pub struct CountingAlloc;

impl CountingAlloc {
    fn on_alloc(size: usize) {
        let live = LIVE_BYTES.fetch_add(size as u64, Ordering::Relaxed) + size as u64;
        PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
    }

    fn on_dealloc(size: usize) {
        LIVE_BYTES.fetch_sub(size as u64, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            Self::on_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        Self::on_dealloc(layout.size());
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            Self::on_alloc(layout.size());
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            Self::on_dealloc(layout.size());
            Self::on_alloc(new_size);
        }
        p
    }
}

impl MemProbe for CountingAlloc {
    fn reset(&self) {
        let live = LIVE_BYTES.load(Ordering::Relaxed);
        BASE_BYTES.store(live, Ordering::Relaxed);
        PEAK_BYTES.store(live, Ordering::Relaxed);
    }

    fn peak_delta_bytes(&self) -> u64 {
        PEAK_BYTES
            .load(Ordering::Relaxed)
            .saturating_sub(BASE_BYTES.load(Ordering::Relaxed))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub persons: usize,
    pub subgroups: usize,
    pub median_ms: f64,
    pub runs_ms: Vec<f64>,
    pub peak_delta_bytes: Option<u64>,
}

/// Least-squares line through (persons, median_ms).
#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    pub slope_ms_per_person: f64,
    pub intercept_ms: f64,
    /// Largest |residual| / fitted value across rows.
    pub max_rel_residual: f64,
}

pub fn fit_linear(rows: &[BenchRow]) -> ScalingFit {
    let n = rows.len() as f64;
    let sx: f64 = rows.iter().map(|r| r.persons as f64).sum();
    let sy: f64 = rows.iter().map(|r| r.median_ms).sum();
    let sxx: f64 = rows.iter().map(|r| (r.persons as f64).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| r.persons as f64 * r.median_ms).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let max_rel_residual = rows
        .iter()
        .map(|r| {
            let fit = slope * r.persons as f64 + intercept;
            ((r.median_ms - fit) / fit.max(1e-12)).abs()
        })
        .fold(0.0, f64::max);
    ScalingFit {
        slope_ms_per_person: slope,
        intercept_ms: intercept,
        max_rel_residual,
    }
}

/// Times the per-subgroup forward passes (embedding through regression)
/// for each crowd size; scene generation and partitioning are excluded.
pub fn bench_scaling(
    model: &Model,
    gen: &GenConfig,
    sizes: &[usize],
    reps: usize,
    max_subgroup: usize,
    probe: Option<&dyn MemProbe>,
) -> Result<Vec<BenchRow>, TrainError> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let scene = generate_scene_with(m, 42, gen)?;
        let groups = partition_subgroups(&scene, &model.cfg.encoder, max_subgroup);

        let run = |model: &Model| -> Result<(), TrainError> {
            for group in &groups {
                let mut g = Graph::inference();
                let out = model.forward_group(&mut g, &scene, &group.persons, None)?;
                std::hint::black_box(out.breakdown.total);
            }
            Ok(())
        };

        run(model)?; // warmup

        let peak = match probe {
            Some(p) => {
                p.reset();
                run(model)?;
                Some(p.peak_delta_bytes())
            }
            None => None,
        };

        let mut runs_ms = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            run(model)?;
            runs_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let mut sorted = runs_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median_ms = sorted[sorted.len() / 2];

        rows.push(BenchRow {
            persons: m,
            subgroups: groups.len(),
            median_ms,
            runs_ms,
            peak_delta_bytes: peak,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_linear_relation() {
        let rows: Vec<BenchRow> = [(8usize, 2.0f64), (40, 10.0), (80, 20.0), (200, 50.0)]
            .iter()
            .map(|&(m, ms)| BenchRow {
                persons: m,
                subgroups: m / 8,
                median_ms: ms,
                runs_ms: vec![ms],
                peak_delta_bytes: None,
            })
            .collect();
        let fit = fit_linear(&rows);
        assert!((fit.slope_ms_per_person - 0.25).abs() < 1e-9);
        assert!(fit.intercept_ms.abs() < 1e-9);
        assert!(fit.max_rel_residual < 1e-9);
    }
}
