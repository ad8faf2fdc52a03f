use lstmkf::gradcheck::gradient_check;
use lstmkf::lkf::LstmKfParams;
use lstmkf::lstm::{BoundModule, HeadSpec, Mode, ModuleSpec, NetModule};
use lstmkf::tape::Elementwise;
use lstmkf::{Matrix, SeededRng, Tape, Var};

const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

/// Sums a non-trivial projection so every output entry gets a distinct weight.
fn project(tape: &mut Tape<'_>, v: Var) -> lstmkf::Result<Var> {
    let (r, c) = tape.shape(v);
    let w = tape.constant(Matrix::from_fn(r, c, |i, j| 0.3 + 0.7 * ((i * c + j) as f64).sin()));
    let h = tape.hadamard(v, w)?;
    Ok(tape.sum(h))
}

fn check<F>(name: &str, f: F, params: &[Matrix])
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> lstmkf::Result<Var>,
{
    let report = gradient_check(f, params, TOL).unwrap();
    assert!(report.passed, "{name}: max rel error {:e}", report.max_rel_error);
}

#[test]
fn matmul_backward_example() {
    let a = Matrix::from_rows(&[&[1.0, 2.0]]);
    let b = Matrix::from_rows(&[&[3.0], &[4.0]]);
    let mut tape = Tape::new();
    let av = tape.param(&a);
    let bv = tape.param(&b);
    let y = tape.matmul(av, bv).unwrap();
    assert_eq!(tape.value(y), &Matrix::filled(1, 1, 11.0));
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(&tape, av), Matrix::from_rows(&[&[3.0, 4.0]]));
    assert_eq!(g.wrt(&tape, bv), Matrix::from_rows(&[&[1.0], &[2.0]]));
}

#[test]
fn quadratic_gradient() {
    let x = Matrix::column(&[1.0, 2.0]);
    let report = gradient_check(|t, v| Ok(t.sum_squares(v[0])), &[x], 1e-8).unwrap();
    assert!(report.passed);
    assert_eq!(report.analytic[0], Matrix::column(&[2.0, 4.0]));
}

#[test]
fn binary_primitives() {
    let mut rng = SeededRng::new(1);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let c = random(3, 4, &mut rng);
    check("matmul", |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y)
    }, &[a.clone(), b]);
    for op in [Elementwise::Add, Elementwise::Sub, Elementwise::Hadamard] {
        check(&format!("{op:?}"), |t, v| {
            let y = t.elementwise(op, &[v[0], v[1]])?;
            project(t, y)
        }, &[a.clone(), c.clone()]);
    }
}

#[test]
fn unary_primitives() {
    let mut rng = SeededRng::new(2);
    let a = random(3, 3, &mut rng);
    for op in [Elementwise::Sigmoid, Elementwise::Tanh, Elementwise::Exp] {
        check(&format!("{op:?}"), |t, v| {
            let y = t.elementwise(op, &[v[0]])?;
            project(t, y)
        }, std::slice::from_ref(&a));
    }
    // keep relu inputs away from the kink
    let r = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });
    check("relu", |t, v| {
        let y = t.relu(v[0]);
        project(t, y)
    }, &[r]);
    check("scale", |t, v| {
        let y = t.scale(v[0], -2.5);
        project(t, y)
    }, std::slice::from_ref(&a));
    check("transpose", |t, v| {
        let y = t.transpose(v[0]);
        project(t, y)
    }, &[random(2, 5, &mut rng)]);
    check("sum", |t, v| {
        let s = t.sum(v[0]);
        let e = t.exp(s);
        Ok(t.sum(e))
    }, std::slice::from_ref(&a));
    check("symmetrize", |t, v| {
        let y = t.symmetrize(v[0])?;
        project(t, y)
    }, std::slice::from_ref(&a));
    check("diag", |t, v| {
        let y = t.diag(v[0])?;
        project(t, y)
    }, &[random(4, 1, &mut rng)]);
    check("diag_part", |t, v| {
        let y = t.diag_part(v[0])?;
        project(t, y)
    }, std::slice::from_ref(&a));
    // entries strictly inside or outside [-0.5, 0.5], away from the edges
    let c = Matrix::column(&[-0.9, -0.2, 0.1, 0.3, 0.8]);
    check("clamp", |t, v| {
        let y = t.clamp(v[0], -0.5, 0.5);
        project(t, y)
    }, &[c]);
}

#[test]
fn solve_spd_both_arguments() {
    let mut rng = SeededRng::new(3);
    let b = random(3, 3, &mut rng);
    let m = b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(3)).unwrap();
    let rhs = random(3, 2, &mut rng);
    check("solve_spd", |t, v| {
        let x = t.solve_spd(v[0], v[1])?;
        project(t, x)
    }, &[m, rhs]);
}

#[test]
fn solve_spd_recovers_x() {
    let mut rng = SeededRng::new(4);
    for n in [1, 2, 5, 8] {
        let b = random(n, n, &mut rng);
        let m = b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(n).scale(0.5)).unwrap();
        let x = random(n, 3, &mut rng);
        let back = m.solve_spd(&m.matmul(&x).unwrap()).unwrap();
        let rel = back.sub(&x).unwrap().max_abs() / x.max_abs();
        assert!(rel < 1e-8, "n={n}: {rel:e}");
    }
}

fn tiny_spec(input: usize, hidden: Vec<usize>, heads: Vec<HeadSpec>) -> ModuleSpec {
    let n = hidden.len();
    ModuleSpec {
        input,
        lstm_hidden: hidden,
        keep_prob: vec![1.0; n],
        heads,
    }
}

/// Random perturbation so gates leave the near-linear init regime.
fn jitter(m: &mut NetModule, seed: u64, amount: f64) {
    let mut rng = SeededRng::new(seed);
    for p in m.params_mut() {
        *p = p.map(|v| v + rng.uniform_range(-amount, amount));
    }
}

#[test]
fn unrolled_module_gradient() {
    let spec = tiny_spec(
        2,
        vec![5, 3],
        vec![
            HeadSpec { output: 4, relu: true },
            HeadSpec { output: 2, relu: false },
        ],
    );
    let mut module = NetModule::new(&spec, 11).unwrap();
    jitter(&mut module, 12, 0.3);
    let params: Vec<Matrix> = module.params().into_iter().cloned().collect();
    let xs: Vec<Matrix> = (0..6)
        .map(|t| Matrix::column(&[(t as f64 * 0.7).sin(), (t as f64 * 0.3).cos()]))
        .collect();
    check("module unrolled over 6 steps", |t, v| {
        let bound = BoundModule::from_vars(&module, v)?;
        let mut state = module.zero_state().on_tape(t);
        let mut total: Option<Var> = None;
        for x in &xs {
            let xv = t.constant(x.clone());
            let step = module.forward_on_tape(t, &bound, xv, &state, &mut Mode::Eval)?;
            let l = project(t, step.output)?;
            total = Some(match total {
                None => l,
                Some(a) => t.add(a, l)?,
            });
            state = step.state;
        }
        Ok(total.unwrap())
    }, &params);
}

#[test]
fn transition_jacobian_matches_finite_differences() {
    let spec = tiny_spec(3, vec![4], vec![HeadSpec { output: 3, relu: false }]);
    let mut f = NetModule::new(&spec, 21).unwrap();
    jitter(&mut f, 22, 0.5);
    let noise = NetModule::new(&spec, 23).unwrap();
    let kf = LstmKfParams::from_modules(f.clone(), noise.clone(), noise).unwrap();
    let mut state = kf.initial_state(&[0.3, -0.4, 0.8]).unwrap();
    // advance once so the recurrent state is non-zero
    let p = kf.predict(&state).unwrap();
    state.f_state = p.f_state;
    state.belief.mean = Matrix::column(&[0.1, 0.5, -0.6]);
    let j = kf.predict(&state).unwrap().jacobian;

    let eval = |y: &Matrix| f.forward(y, &state.f_state, Mode::Eval).unwrap().0;
    let h = 1e-6;
    let mut fd = Matrix::zeros(3, 3);
    for c in 0..3 {
        let mut plus = state.belief.mean.clone();
        let mut minus = state.belief.mean.clone();
        plus.as_mut_slice()[c] += h;
        minus.as_mut_slice()[c] -= h;
        let d = eval(&plus).sub(&eval(&minus)).unwrap().scale(0.5 / h);
        for r in 0..3 {
            fd[(r, c)] = d[(r, 0)];
        }
    }
    let err = j.sub(&fd).unwrap().max_abs();
    assert!(err < 1e-5, "jacobian error {err:e}");
    assert!(j.max_abs() > 1e-3);
}

#[test]
fn filter_loss_gradient_with_detached_transition() {
    let spec = tiny_spec(2, vec![3], vec![HeadSpec { output: 2, relu: false }]);
    let mut mods: Vec<NetModule> = (0..3).map(|k| NetModule::new(&spec, 30 + k).unwrap()).collect();
    for (k, m) in mods.iter_mut().enumerate() {
        jitter(m, 40 + k as u64, 0.4);
    }
    let r = mods.pop().unwrap();
    let q = mods.pop().unwrap();
    let f = mods.pop().unwrap();
    let kf = LstmKfParams::from_modules(f, q, r).unwrap();
    let truth: Vec<Vec<f64>> = (0..3).map(|t| vec![(t as f64 * 0.4).sin(), (t as f64 * 0.4).cos()]).collect();
    let zs: Vec<Vec<f64>> = truth.iter().map(|y| vec![y[0] + 0.1, y[1] - 0.05]).collect();
    let carry = kf.initial_state(&zs[0]).unwrap();
    let params: Vec<Matrix> = lstmkf::train::SequenceModel::params(&kf).into_iter().cloned().collect();
    let jac = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        kf.segment_on_tape(&mut tape, &vars, &carry, &truth, &zs, 0.8, None, &mut Mode::Eval).unwrap().1
    };
    check("lstm-kf composite loss", |t, v| {
        kf.segment_on_tape(t, v, &carry, &truth, &zs, 0.8, Some(&jac), &mut Mode::Eval)
            .map(|(out, _)| out.loss)
    }, &params);
}
