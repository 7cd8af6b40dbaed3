use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use coalflow::motion::{simulate, MotionModel, SystemState};
use coalflow::skeleton::{build_skeleton, SkeletonConfig};
use coalflow::{stats, Execution, RngStream};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn cluster_replicas(c: &mut Criterion) {
    let model = MotionModel::arratia();
    let starts: Vec<f64> = (0..128).map(|i| (i as f64 + 0.5) / 128.0).collect();
    let mut g = c.benchmark_group("cluster_count_64_replicas");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(64, |i| {
                    let mut s = SystemState::new(&starts).unwrap();
                    simulate(&model, &mut s, 0.5, 1e-3, &mut RngStream::new(1).child(i as u64).generator(), |_| {})
                        .unwrap();
                    s.n_clusters()
                })
            })
        });
    }
    g.finish();
}

fn skeleton_replicas(c: &mut Criterion) {
    let cfg = SkeletonConfig::every_step(MotionModel::arratia(), (-1.0, 2.0), 1.0 / 16.0, (0.0, 1.5), 1e-2);
    let mut g = c.benchmark_group("skeleton_32_replicas");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(32, |i| {
                    let s = RngStream::new(2).child(i as u64);
                    build_skeleton(&cfg, s.seed(), &mut s.generator()).unwrap().n_trajectories()
                })
            })
        });
    }
    g.finish();
}

fn energy_permutations(c: &mut Criterion) {
    let n = 1000;
    let x: Vec<f64> = (0..n * 3).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let y: Vec<f64> = (0..n * 3).map(|i| ((i * 104_729) % 997) as f64 / 997.0).collect();
    let mut g = c.benchmark_group("energy_test_1000x1000_dim3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| stats::energy_test(&x, &y, 3, 99, &RngStream::new(3), exec))
        });
    }
    g.finish();
}

criterion_group!(benches, cluster_replicas, skeleton_replicas, energy_permutations);
criterion_main!(benches);
