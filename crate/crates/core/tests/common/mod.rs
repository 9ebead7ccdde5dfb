use mlmoments::SampleMatrix;

pub fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `0..n`, in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Multivariate U-statistic: average over `r`-subsets of
/// `(1/r) Σ_k (−1)^k C(r−1,k) x_{[r−k:r]}` where `[j:r]` is the concomitant
/// row of the `j`-th smallest first coordinate within the subset.
pub fn ustat_concomitant(s: &SampleMatrix, r: usize) -> Vec<f64> {
    let subs = subsets(s.n(), r);
    let mut acc = vec![0.0; s.dim()];
    for sub in &subs {
        let mut rows = sub.clone();
        rows.sort_by(|&a, &b| s.get(a, 0).total_cmp(&s.get(b, 0)));
        for k in 0..r {
            let c = if k % 2 == 0 { 1.0 } else { -1.0 } * choose(r as u64 - 1, k as u64) / r as f64;
            let row = s.row(rows[r - 1 - k]);
            for (a, x) in acc.iter_mut().zip(row) {
                *a += c * x;
            }
        }
    }
    acc.iter().map(|a| a / subs.len() as f64).collect()
}

pub fn tl_enumeration(xs: &[f64], r: usize, t1: usize, t2: usize) -> f64 {
    let m = r + t1 + t2;
    let subs = subsets(xs.len(), m);
    let total: f64 = subs
        .iter()
        .map(|sub| {
            let mut v: Vec<f64> = sub.iter().map(|&i| xs[i]).collect();
            v.sort_by(f64::total_cmp);
            (0..r)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * choose(r as u64 - 1, k as u64) * v[r + t1 - 1 - k]
                })
                .sum::<f64>()
                / r as f64
        })
        .sum();
    total / subs.len() as f64
}
