/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + h;
            let up = f(&point);
            point[i] = orig - h;
            let down = f(&point);
            point[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max over components of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -3.0, 0.5], 1e-3);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_form_matches_analytic() {
        let mut s = Stream::from_seed(11);
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = s.normal();
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let f = |p: &[f64]| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += p[i] * a[i * n + j] * p[j];
                }
            }
            acc
        };
        let fd = finite_difference_gradient(f, &x, 1e-4);
        for i in 0..n {
            let analytic: f64 = 2.0 * (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>();
            assert!((fd[i] - analytic).abs() < 1e-5);
        }
    }
}
