//! Small reference programs: three with known optima and a seeded family of
//! random instances that are primal and dual strictly feasible by construction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BlockKind, BlockMatrix, SdpProblem, SparseSym};

/// minimize trace X s.t. X_11 = 2 over a single 1x1 block.
pub fn trace_example() -> SdpProblem {
    let mut p = SdpProblem::new(vec![BlockKind::Psd(1)]);
    p.c = SparseSym::from_triplets([(0, 0, 0, 1.0)]);
    p.add_constraint(SparseSym::from_triplets([(0, 0, 0, 1.0)]), 2.0);
    p
}

/// maximize t s.t. diag(3, 1) - t I >= 0, with t = t+ - t- in a diagonal block.
pub fn eigen_margin_example() -> SdpProblem {
    let mut p = SdpProblem::new(vec![BlockKind::Psd(2), BlockKind::Diag(2)]);
    p.c = SparseSym::from_triplets([(1, 0, 0, -1.0), (1, 1, 1, 1.0)]);
    p.add_constraint(SparseSym::from_triplets([(0, 0, 0, 1.0), (1, 0, 0, 1.0), (1, 1, 1, -1.0)]), 3.0);
    p.add_constraint(SparseSym::from_triplets([(0, 1, 1, 1.0), (1, 0, 0, 1.0), (1, 1, 1, -1.0)]), 1.0);
    p.add_constraint(SparseSym::from_triplets([(0, 0, 1, 1.0)]), 0.0);
    p
}

/// minimize <C, X> with C = [[2, 1], [1, 2]] s.t. trace X = 1.
pub fn min_eigen_example() -> SdpProblem {
    let mut p = SdpProblem::new(vec![BlockKind::Psd(2)]);
    p.c = SparseSym::from_triplets([(0, 0, 0, 2.0), (0, 0, 1, 1.0), (0, 1, 1, 2.0)]);
    p.add_constraint(SparseSym::from_triplets([(0, 0, 0, 1.0), (0, 1, 1, 1.0)]), 1.0);
    p
}

fn random_spd(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(k, k) * 0.1
}

/// Feasible instance by construction: `b = A(X0)`, `C = A^T y0 + S0`.
pub fn random_feasible(seed: u64) -> SdpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nblocks = rng.random_range(1..=3);
    let mut blocks = Vec::new();
    for _ in 0..nblocks {
        if rng.random_bool(0.25) {
            blocks.push(BlockKind::Diag(rng.random_range(1..=6)));
        } else {
            blocks.push(BlockKind::Psd(rng.random_range(1..=12)));
        }
    }
    let capacity: usize = blocks.iter().map(BlockKind::num_entries).sum();
    let m = rng.random_range(1..=40usize.min(capacity));

    let x0: Vec<BlockMatrix> = blocks
        .iter()
        .map(|k| match *k {
            BlockKind::Psd(n) => BlockMatrix::Dense(random_spd(&mut rng, n)),
            BlockKind::Diag(n) => BlockMatrix::Diag(DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0))),
        })
        .collect();
    let s0: Vec<BlockMatrix> = blocks
        .iter()
        .map(|k| match *k {
            BlockKind::Psd(n) => BlockMatrix::Dense(random_spd(&mut rng, n)),
            BlockKind::Diag(n) => BlockMatrix::Diag(DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0))),
        })
        .collect();

    let mut p = SdpProblem::new(blocks.clone());
    let mut c = SparseSym::new();
    for (bi, s) in s0.iter().enumerate() {
        for i in 0..s.dim() {
            for j in i..s.dim() {
                let v = s.get(i, j);
                if v != 0.0 {
                    c.push(bi, i, j, v);
                }
            }
        }
    }
    for _ in 0..m {
        let mut a = SparseSym::new();
        for (bi, k) in blocks.iter().enumerate() {
            for i in 0..k.dim() {
                for j in i..k.dim() {
                    if matches!(k, BlockKind::Diag(_)) && i != j {
                        continue;
                    }
                    if rng.random_bool(0.5) {
                        a.push(bi, i, j, rng.random_range(-1.0..1.0));
                    }
                }
            }
        }
        a.canonicalize();
        if a.is_empty() {
            a = SparseSym::from_triplets([(0, 0, 0, 1.0)]);
        }
        let y0: f64 = rng.random_range(-1.0..1.0);
        for e in a.entries() {
            c.push(e.block, e.row, e.col, y0 * e.value);
        }
        let rhs = a.inner(&x0);
        p.add_constraint(a, rhs);
    }
    c.canonicalize();
    p.c = c;
    p
}
