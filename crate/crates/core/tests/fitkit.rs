use nalgebra::{DMatrix, DVector};
use spinbath::fitkit::{solve, FitOptions, FitProblem, FitStatus, Parameter};
use spinbath::synth::Noise;

fn line_problem<'a>(xs: &'a [f64], ys: &'a [f64], sigma: &'a [f64]) -> FitProblem<'a> {
    let mut p = FitProblem::new();
    p.add_param(Parameter::free("a", 0.0));
    p.add_param(Parameter::free("b", 0.0));
    p.add_block_sigma("line", sigma, move |q, out| {
        for (o, (x, y)) in out.iter_mut().zip(xs.iter().zip(ys)) {
            *o = q[0] + q[1] * x - y;
        }
        Ok(())
    })
    .unwrap();
    p
}

fn noisy_line(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut noise = Noise::new(seed);
    let xs: Vec<f64> = (0..n).map(|k| k as f64 / n as f64 * 10.0).collect();
    let sigma: Vec<f64> = xs.iter().map(|x| 0.1 + 0.05 * x).collect();
    let ys = xs.iter().zip(&sigma).map(|(x, s)| noise.additive(1.5 - 0.7 * x, *s)).collect();
    (xs, ys, sigma)
}

#[test]
fn weighted_line_matches_closed_form_covariance() {
    let (xs, ys, sigma) = noisy_line(200, 1);
    let opts = FitOptions { scale_covariance: false, ..Default::default() };
    let res = solve(&line_problem(&xs, &ys, &sigma), &opts).unwrap();
    let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let w = DMatrix::from_diagonal(&DVector::from_iterator(xs.len(), sigma.iter().map(|s| 1.0 / (s * s))));
    let normal = x.transpose() * &w * &x;
    let cov = normal.clone().try_inverse().unwrap();
    let beta = cov.clone() * x.transpose() * &w * DVector::from_vec(ys.clone());
    for k in 0..2 {
        assert!((res.params[k] - beta[k]).abs() < 1e-9, "{k}");
        assert!((res.std_errors[k] / cov[(k, k)].sqrt() - 1.0).abs() < 0.01);
    }
}

#[test]
fn duplicated_data_shrinks_errors_by_root_two() {
    let (xs, ys, sigma) = noisy_line(200, 2);
    let single = solve(&line_problem(&xs, &ys, &sigma), &FitOptions::default()).unwrap();
    let (xs2, ys2, s2) = ([xs.clone(), xs].concat(), [ys.clone(), ys].concat(), [sigma.clone(), sigma].concat());
    let double = solve(&line_problem(&xs2, &ys2, &s2), &FitOptions::default()).unwrap();
    for k in 0..2 {
        let ratio = single.std_errors[k] / double.std_errors[k];
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.01, "{ratio}");
    }
}

#[test]
fn exact_data_has_vanishing_errors() {
    let xs: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 0.25 * x).collect();
    let sigma = vec![1.0; xs.len()];
    let res = solve(&line_problem(&xs, &ys, &sigma), &FitOptions::default()).unwrap();
    assert_eq!(res.status, FitStatus::Converged);
    assert!(res.residual_norm < 1e-10);
    assert!(res.std_errors.iter().all(|e| *e < 1e-9), "{:?}", res.std_errors);
}

#[test]
fn tied_and_fixed_parameters_in_joint_fit() {
    // Two exponentials sharing an amplitude, the second decaying twice as fast.
    let ts: Vec<f64> = (0..40).map(|k| k as f64 * 0.05).collect();
    let y1: Vec<f64> = ts.iter().map(|t| 3.0 * (-1.2 * t).exp() + 0.1).collect();
    let y2: Vec<f64> = ts.iter().map(|t| 3.0 * (-2.4 * t).exp() + 0.1).collect();
    let mut p = FitProblem::new();
    p.add_param(Parameter::free("amp", 1.0).bounded(0.0, 10.0));
    p.add_param(Parameter::free("k", 0.5));
    p.add_param(Parameter::tied("k2", 1, 2.0, 0.0));
    p.add_param(Parameter::fixed("offset", 0.1));
    for (name, idx, ys) in [("one", 1usize, &y1), ("two", 2usize, &y2)] {
        let ts = &ts;
        p.add_block(name, vec![1.0; ts.len()], move |q, out| {
            for (o, (t, y)) in out.iter_mut().zip(ts.iter().zip(ys.iter())) {
                *o = q[0] * (-q[idx] * t).exp() + q[3] - y;
            }
            Ok(())
        })
        .unwrap();
    }
    let res = solve(&p, &FitOptions::default()).unwrap();
    assert!((res.value("amp").unwrap() - 3.0).abs() < 1e-8);
    assert!((res.value("k").unwrap() - 1.2).abs() < 1e-8);
    assert_eq!(res.value("k2").unwrap(), 2.0 * res.value("k").unwrap());
    assert_eq!(res.value("offset").unwrap(), 0.1);
    assert_eq!(res.n_free, 2);
}
