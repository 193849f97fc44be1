#![allow(dead_code)]

use rand::Rng;
use rwre::env::ProbTriple;

/// One epoch as `(time, position, overshoot, attempts)`.
pub type Epoch = (u64, i64, u8, u32);

/// Epochs by the attempt recursion, evaluated literally on a finite path:
/// from the origin `o`, `S_k` is the first time the path exceeds `M_{k−1}`,
/// `R_k` the first time after `S_k` it drops below `X_{S_k}`, and
/// `M_k = max X` up to `R_k`. `D = ∞` after `S_k` is read as "reaches
/// `X_{S_k} + w` first". The first such `S_k` is the epoch, with `K = k`;
/// evaluation then restarts from it.
pub fn literal_epochs(path: &[i64], w: i64) -> Vec<Epoch> {
    let mut out = Vec::new();
    let mut origin = 0usize;
    'outer: loop {
        let mut level = path[origin];
        let mut from = origin;
        let mut k = 0u32;
        loop {
            let Some(s) = (from + 1..path.len()).find(|&n| path[n] > level) else {
                break 'outer;
            };
            k += 1;
            let x = path[s];
            let mut verdict = None;
            for n in s + 1..path.len() {
                if path[n] < x {
                    verdict = Some(Err(n));
                    break;
                }
                if path[n] >= x + w {
                    verdict = Some(Ok(()));
                    break;
                }
            }
            match verdict {
                None => break 'outer,
                Some(Err(r)) => {
                    level = *path[origin..=r].iter().max().unwrap();
                    from = r;
                }
                Some(Ok(())) => {
                    let prior_max = *path[..s].iter().max().unwrap();
                    out.push((s as u64, x, (x - prior_max) as u8, k));
                    origin = s;
                    continue 'outer;
                }
            }
        }
    }
    out
}

/// Path from 0 with jumps in {−1, +1, +2}.
pub fn random_path<R: Rng>(rng: &mut R, len: usize) -> Vec<i64> {
    let mut path = vec![0i64];
    for _ in 1..len {
        let jump = [-1, 1, 2][rng.random_range(0..3)];
        path.push(path.last().unwrap() + jump);
    }
    path
}

/// Spectral radius of `[[a, b], [1, 0]]` for a point-mass transfer matrix.
pub fn spectral_radius(t: &ProbTriple) -> f64 {
    let a = (t.p_one + t.p_two) / t.p_left;
    let b = t.p_two / t.p_left;
    (a + (a * a + 4.0 * b).sqrt()) / 2.0
}

/// Probability of exiting `[−n, 0]` below, from 0, by dense Gaussian
/// elimination with partial pivoting on `h = P h + boundary`.
/// `triples[i]` is the law at site `i − n`.
pub fn dense_hit_prob(triples: &[ProbTriple]) -> f64 {
    let m = triples.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, t) in triples.iter().enumerate() {
        a[i][i] = 1.0;
        if i == 0 {
            a[i][m] += t.p_left;
        } else {
            a[i][i - 1] -= t.p_left;
        }
        if i + 1 < m {
            a[i][i + 1] -= t.p_one;
        }
        if i + 2 < m {
            a[i][i + 2] -= t.p_two;
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=m {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    a[m - 1][m] / a[m - 1][m - 1]
}
