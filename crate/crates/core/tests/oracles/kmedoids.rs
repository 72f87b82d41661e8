//! Exhaustive k-medoids over every k-subset, for small instances.

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sum over points of the distance to the nearest medoid.
pub fn assignment_cost(points: &[Vec<f64>], medoids: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            medoids
                .iter()
                .map(|&m| euclidean(p, &points[m]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        subsets(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Optimal cost and the lexicographically first optimal medoid set.
pub fn brute_force(points: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    let mut all = Vec::new();
    subsets(points.len(), k, 0, &mut Vec::new(), &mut all);
    let mut best = (f64::INFINITY, Vec::new());
    for s in all {
        let c = assignment_cost(points, &s);
        if c < best.0 {
            best = (c, s);
        }
    }
    best
}
