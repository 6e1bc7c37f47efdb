use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;

use esper_core::envs::c4_solver::C4Solver;
use esper_core::envs::connect4::{C4Board, Geometry};
use esper_core::envs::g2048::{Direction, G2048Board};
use esper_core::nn::{Head, Lstm, Mlp, MlpSpec};
use esper_core::rng::Rng;

fn solver(c: &mut Criterion) {
    let geom = Geometry::new(5, 4).unwrap();
    let solver = C4Solver::new(geom, 20);
    let empty = C4Board::empty(geom);
    c.bench_function("c4 solve empty 5x4 (cold table)", |b| {
        b.iter(|| {
            solver.clear();
            black_box(solver.solve(&empty).unwrap())
        })
    });
}

fn slide(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let boards: Vec<G2048Board> = (0..1024)
        .map(|_| {
            let rows = std::array::from_fn(|_| {
                std::array::from_fn(|_| if rng.uniform() < 0.4 { 0 } else { 1 + rng.below(6) as u8 })
            });
            G2048Board::from_rows(rows, 11)
        })
        .collect();
    c.bench_function("2048 slide x1024 boards x4 directions", |b| {
        b.iter(|| {
            let mut merges = 0;
            for board in &boards {
                for d in 0..4 {
                    merges += board.slide(Direction::from_action(d).unwrap()).2;
                }
            }
            black_box(merges)
        })
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x = Array2::from_shape_fn((256, 48), |_| rng.normal());
    let mut mlp = Mlp::new(MlpSpec::new(48, 128, 2, 7, Head::Logits), &mut rng);
    c.bench_function("mlp 48-128-128-7 forward+backward, batch 256", |b| {
        b.iter_batched(
            || x.clone(),
            |x| {
                let (y, cache) = mlp.forward(&x, true);
                black_box(mlp.backward(&cache, &y))
            },
            BatchSize::SmallInput,
        )
    });

    let lstm = Lstm::new(55, 128, &mut rng);
    let seq: Vec<Array2<f64>> = (0..20).map(|_| Array2::from_shape_fn((64, 55), |_| rng.normal())).collect();
    c.bench_function("lstm 55->128 forward, 20 steps x batch 64", |b| b.iter(|| black_box(lstm.forward(&seq))));
}

criterion_group!(benches, solver, slide, networks);
criterion_main!(benches);
