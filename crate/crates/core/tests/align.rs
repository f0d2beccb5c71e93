use pitchflow::align::{expand_indices, likelihoods, mas, AlignmentPath, LikelihoodMatrix};
use pitchflow::ndmath::Array;
use pitchflow::rng_from_seed;
use rand::Rng as _;

/// Every monotone surjective assignment of `t` frames to `n` tokens.
fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            if *cur.last().unwrap() == n - 1 {
                out.push(cur.clone());
            }
            return;
        }
        let last = *cur.last().unwrap();
        for next in [last, last + 1] {
            if next < n {
                cur.push(next);
                rec(n, t, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(n, t, &mut vec![0], &mut out);
    out
}

fn random_matrix(rng: &mut pitchflow::Rng, n: usize, t: usize) -> LikelihoodMatrix {
    LikelihoodMatrix::new(Array::from_fn(n, t, |_, _| rng.random_range(-5.0..1.0))).unwrap()
}

#[test]
fn enumeration_counts() {
    assert_eq!(all_paths(3, 6).len(), 10);
    assert_eq!(all_paths(1, 4).len(), 1);
    assert_eq!(all_paths(4, 4).len(), 1);
}

#[test]
fn three_by_six_matches_exhaustive() {
    let mut rng = rng_from_seed(7);
    for _ in 0..200 {
        let l = random_matrix(&mut rng, 3, 6);
        let best = all_paths(3, 6).iter().map(|p| l.path_score(p)).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(l.path_score(&mas(&l).unwrap().assignment), best);
    }
}

#[test]
fn oracle_equivalence_small_sizes() {
    let mut rng = rng_from_seed(11);
    let mut unique_checked = 0;
    for trial in 0..1000 {
        let n = 1 + trial % 5;
        let t = n + rng.random_range(0..=10 - n);
        let l = random_matrix(&mut rng, n, t);
        let path = mas(&l).unwrap();
        path.validate().unwrap();
        let paths = all_paths(n, t);
        let scored: Vec<(f64, &Vec<usize>)> = paths.iter().map(|p| (l.path_score(p), p)).collect();
        let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(l.path_score(&path.assignment), best, "n {n} t {t}");
        let winners: Vec<_> = scored.iter().filter(|s| s.0 == best).collect();
        if winners.len() == 1 {
            assert_eq!(&path.assignment, winners[0].1);
            unique_checked += 1;
        }
    }
    assert!(unique_checked > 900);
}

#[test]
fn constant_shift_keeps_path() {
    let mut rng = rng_from_seed(3);
    for _ in 0..200 {
        let l = random_matrix(&mut rng, 4, 9);
        let shifted = LikelihoodMatrix::new(l.values.map(|v| v + 17.25)).unwrap();
        assert_eq!(mas(&l).unwrap(), mas(&shifted).unwrap());
    }
}

#[test]
fn identical_means_give_identical_rows() {
    let mu = Array::from_vec(&[2, 3], vec![1.0f64, 0.5, 1.0, -1.0, 2.0, -1.0]).unwrap();
    let z = Array::from_fn(2, 4, |r, c| (r + c) as f64 * 0.3);
    let l = likelihoods(&mu, &z).unwrap();
    assert_eq!(l.values.row_slice(0), l.values.row_slice(2));
    let c = (2.0 * std::f64::consts::PI).ln();
    let same = likelihoods(&mu.slice_cols(0, 1), &mu.slice_cols(0, 1)).unwrap();
    assert!((same.values.get(0, 0) + c).abs() < 1e-12);
}

#[test]
fn recovers_planted_alignment() {
    // well-separated means: the likelihood peaks on the planted path
    let durations = [2usize, 1, 3, 2];
    let mu = Array::from_fn(1, 4, |_, i| 10.0 * i as f64);
    let assignment = expand_indices(&durations);
    let z = Array::from_fn(1, assignment.len(), |_, t| 10.0 * assignment[t] as f64 + 0.1);
    let path = mas(&likelihoods(&mu, &z).unwrap()).unwrap();
    assert_eq!(path, AlignmentPath::from_durations(&durations).unwrap());
}
