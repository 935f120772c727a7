//! Acceptance run: one PASS/FAIL line per criterion. With
//! `ACCEPTANCE_STRICT` set, any failing criterion makes the exit status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use czgrape::commands::{self, GlobalOptions, Session};
use czgrape::config::RunConfig;
use czgrape_core::dynamics::{propagate_superoperator, propagate_unitary};
use czgrape_core::grape::{
    gradient_protocol_one, gradient_protocol_two, ideal_final_state, state_objective, unitary_objective,
    IterationRecord,
};
use czgrape_core::lab::{chevron_model, chevron_scan, fit_chevron};
use czgrape_core::linalg::{c, conjugate, hermitian_eigen, max_abs, restrict, trace, CMatrix};
use czgrape_core::pulse::{flattop, square, Flattop, PulseSequence};
use czgrape_core::rb::{build_clifford_group, rb_fidelity, run_rb, CzImpl, RbConfig};
use czgrape_core::system::{ideal_cz4, ideal_cz5, Coupling, DeviceParams, SystemModel, FIVE_STATE};
use czgrape_core::tomography::{
    default_fit_options, ideal_cz_chi, operator_fidelity, optimization_inputs, powell_fit, principal_operator,
    ProcessTomography, ProductState,
};
use czgrape_core::mhz_to_rad_per_ns;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, elapsed: f64, budget: f64, detail: &str) {
        let in_time = elapsed <= budget;
        let ok = pass && in_time;
        if !ok {
            self.failed.push(n);
        }
        let timing = if in_time { String::new() } else { " over budget".to_string() };
        println!(
            "[criterion {n}] {} {detail} ({elapsed:.1} s, budget {budget:.0} s{timing})",
            if ok { "PASS" } else { "FAIL" }
        );
    }

    fn note(&self, n: usize, detail: &str) {
        println!("[criterion {n}]      {detail}");
    }
}

fn preset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn closed_model() -> SystemModel {
    SystemModel::new(DeviceParams::paper().without_dissipation()).unwrap().with_dissipation(false)
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let h = (&a + a.adjoint()) * c(1.0, 0.0);
    czgrape_core::linalg::expm(&(h * c(0.0, -1.0)))
}

fn random_density(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let m = closed_model().with_coupling(Coupling::AvoidedCrossing);
    let t = m.params.swap_time();
    let seq = square(m.params.resonance_amplitude(), t, t / 50.0).unwrap();
    let u5 = restrict(&propagate_unitary(&seq, &m).unwrap().gate(), &FIVE_STATE);
    let f = trace(&(ideal_cz5().adjoint() * &u5)).norm_sqr() / 25.0;
    report.record(1, f > 0.999, start.elapsed().as_secs_f64(), 1.0, &format!("square pulse T = {t:.3} ns: F = {f:.12} (> 0.999)"));
}

fn nudged(seq: &PulseSequence, m: usize, d: f64) -> PulseSequence {
    let mut a = seq.amplitudes().to_vec();
    a[m] += d;
    PulseSequence::new(seq.tau(), a).unwrap()
}

fn central<F: Fn(&PulseSequence) -> f64>(seq: &PulseSequence, m: usize, f: F) -> f64 {
    const H: f64 = 1e-5;
    (f(&nudged(seq, m, H)) - f(&nudged(seq, m, -H))) / (2.0 * H)
}

/// Largest relative error over components with `|k| > 1e-6 max|k|`, and
/// the normwise relative error.
fn compare(k: &[f64], fd: &[f64]) -> (f64, f64) {
    let top = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = k
        .iter()
        .zip(fd)
        .filter(|(a, _)| a.abs() > 1e-6 * top)
        .map(|(a, f)| (a - f).abs() / f.abs())
        .fold(0.0f64, f64::max);
    let num: f64 = k.iter().zip(fd).map(|(a, f)| (a - f).powi(2)).sum();
    let den: f64 = fd.iter().map(|f| f * f).sum();
    (worst, (num / den).sqrt())
}

fn protocol_one_errors(seq: &PulseSequence, m: &SystemModel) -> (f64, f64) {
    let chain = propagate_unitary(seq, m).unwrap();
    let k = gradient_protocol_one(&chain, &restrict(&chain.gate(), &FIVE_STATE)).unwrap();
    let fd: Vec<f64> =
        (0..seq.len()).map(|i| central(seq, i, |s| unitary_objective(&propagate_unitary(s, m).unwrap()))).collect();
    compare(&k.0, &fd)
}

fn protocol_two_errors(seq: &PulseSequence, m: &SystemModel, input: ProductState) -> (f64, f64) {
    let objective = |s: &PulseSequence| {
        let rho = propagate_superoperator(s, m).unwrap().evolve(&input.density9());
        state_objective(&rho, &ideal_final_state(input)).unwrap()
    };
    let chain = propagate_superoperator(seq, m).unwrap();
    let rho = chain.evolve(&input.density9());
    let k = gradient_protocol_two(&chain, &rho, &ideal_final_state(input)).unwrap();
    let fd: Vec<f64> = (0..seq.len()).map(|i| central(seq, i, objective)).collect();
    compare(&k.0, &fd)
}

fn criterion_2(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let closed = closed_model();
    let lossy = SystemModel::new(DeviceParams::paper()).unwrap();
    let input = optimization_inputs()[0];
    let res = DeviceParams::paper().resonance_amplitude();
    let mut worst = [0.0f64; 2];
    let mut coarse = [0.0f64; 2];
    let mut fine = [0.0f64; 2];
    let mut passing = [0usize; 2];
    let n = 20;
    for _ in 0..n {
        let amps = (0..10).map(|_| res * rng.random_range(0.0..1.1)).collect();
        let seq = PulseSequence::new(0.1, amps).unwrap();
        let half = seq.resample(0.05).unwrap();
        let one = (protocol_one_errors(&seq, &closed).0, protocol_one_errors(&half, &closed).0);
        let two = (protocol_two_errors(&seq, &lossy, input).0, protocol_two_errors(&half, &lossy, input).0);
        for (p, (c0, c1)) in [one, two].into_iter().enumerate() {
            worst[p] = worst[p].max(c0);
            coarse[p] += c0 / n as f64;
            fine[p] += c1 / n as f64;
            passing[p] += usize::from(c0 < 0.05);
        }
    }
    let pass = (0..2).all(|p| passing[p] == n && fine[p] <= 0.5 * coarse[p]);
    let detail = format!(
        "random 10 x 0.1 ns pulses within 5%: I {}/{n}, II {}/{n}; worst component error I {:.3}, II {:.3}; \
         mean error 0.1 -> 0.05 ns: I {:.3} -> {:.3}, II {:.3} -> {:.3}",
        passing[0], passing[1], worst[0], worst[1], coarse[0], fine[0], coarse[1], fine[1]
    );
    report.record(2, pass, start.elapsed().as_secs_f64(), 120.0, &detail);

    // Normwise agreement on the smooth seed pulse, for context.
    let mut norms = Vec::new();
    for tau in [0.5, 0.25] {
        let seq = flattop(&Flattop::paper(), tau).unwrap();
        norms.push((protocol_one_errors(&seq, &closed).1, protocol_two_errors(&seq, &lossy, input).1));
    }
    report.note(
        2,
        &format!(
            "flattop seed, normwise error 0.5 -> 0.25 ns: I {:.4} -> {:.4}, II {:.4} -> {:.4}",
            norms[0].0, norms[1].0, norms[0].1, norms[1].1
        ),
    );
}

fn criterion_3(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let res = DeviceParams::paper().resonance_amplitude();
    let amps = (0..100).map(|_| res * rng.random_range(0.0..1.1)).collect();
    let seq = PulseSequence::new(0.5, amps).unwrap();

    let closed = closed_model();
    let chain = propagate_unitary(&seq, &closed).unwrap();
    let u = chain.total_decoupled().adjoint() * chain.total_coupled();
    let liouville = propagate_superoperator(&seq, &closed).unwrap();
    let mut unitary_dev = 0.0f64;
    let inputs: Vec<CMatrix> = (0..10).map(|_| random_density(9, &mut rng)).collect();
    for rho in &inputs {
        unitary_dev = unitary_dev.max(max_abs(&(liouville.evolve(rho) - conjugate(&u, rho))));
    }

    let lossy = propagate_superoperator(&seq, &SystemModel::new(DeviceParams::paper()).unwrap()).unwrap();
    let mut trace_dev = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for rho in &inputs {
        let out = lossy.evolve(rho);
        trace_dev = trace_dev.max((trace(&out) - c(1.0, 0.0)).norm());
        let (vals, _) = hermitian_eigen(&czgrape_core::linalg::hermitian_part(&out));
        min_eig = min_eig.min(vals.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let pass = unitary_dev < 1e-9 && trace_dev < 1e-9 && min_eig >= -1e-9;
    let detail = format!(
        "50 ns random pulse: |Liouville - unitary| = {unitary_dev:.1e}, |Tr - 1| = {trace_dev:.1e}, min eigenvalue = {min_eig:.2e}"
    );
    report.record(3, pass, start.elapsed().as_secs_f64(), 30.0, &detail);
}

fn criterion_4(report: &mut Report) {
    let start = Instant::now();
    let tomo = ProcessTomography::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 1.0f64;
    for _ in 0..100 {
        let u = random_unitary(4, &mut rng);
        let chi = tomo.qpt(|rho| Ok(conjugate(&u, rho))).unwrap();
        let fit = powell_fit(&chi, &principal_operator(&chi), &default_fit_options()).unwrap();
        worst = worst.min(operator_fidelity(&fit.operator.matrix, &u));
    }
    let chi = tomo.qpt(|rho| Ok(conjugate(&ideal_cz4(), rho))).unwrap();
    let corners = [0usize, 3, 12, 15];
    let mut pattern_dev = 0.0f64;
    for m in 0..16 {
        for n in 0..16 {
            let want = match (corners.contains(&m) && corners.contains(&n), (m == 15) != (n == 15)) {
                (false, _) => 0.0,
                (true, false) => 0.25,
                (true, true) => -0.25,
            };
            pattern_dev = pattern_dev.max((chi.0[(m, n)] - c(want, 0.0)).norm());
        }
    }
    let same = max_abs(&(&chi.0 - &ideal_cz_chi().0));
    let pass = worst > 0.999 && pattern_dev < 1e-6;
    let detail = format!(
        "100 random unitaries: worst fit F = {worst:.6} (> 0.999); CZ chi corner deviation {pattern_dev:.1e} (analytic {same:.1e})"
    );
    report.record(4, pass, start.elapsed().as_secs_f64(), 300.0, &detail);
}

fn optimize(name: &str, out: &Path) -> (Session, Vec<IterationRecord>) {
    let opts = GlobalOptions { output_dir: Some(out.to_path_buf()), ..GlobalOptions::default() };
    let session = Session::load(&preset(name), &opts).unwrap();
    let mut sink = Vec::new();
    let outcome = commands::optimize(&session, &mut sink).unwrap();
    (session, outcome.records)
}

fn criterion_5(report: &mut Report, dir: &Path) -> PathBuf {
    let start = Instant::now();
    let out = dir.join("protocol1");
    let (session, recs) = optimize("protocol1_paper.toml", &out);
    let f_chi: Vec<f64> = recs.iter().map(|r| r.f_chi.unwrap()).collect();
    let f_u: Vec<f64> = recs.iter().map(|r| r.f_uexp.unwrap()).collect();
    let steps = recs.len() - 1;
    let seed_ok = (0.75..=0.90).contains(&f_chi[0]);
    let ordered = f_chi.iter().zip(&f_u).all(|(c, u)| u >= c);
    let last = steps;
    let pass = seed_ok
        && (5..=10).contains(&steps)
        && f_chi[last] >= 0.98
        && f_u[last] >= 0.99
        && ordered;
    let alpha = session.config.optimizer.learning_rate_ghz2;
    let detail = format!(
        "alpha = {alpha} GHz^2, {steps} steps: F(chi) {:.4} -> {:.4} (>= 0.98), F(U_exp) {:.4} -> {:.4} (>= 0.99), \
         seed in [0.75, 0.90]: {seed_ok}, F(U_exp) >= F(chi) at every step: {ordered}",
        f_chi[0], f_chi[last], f_u[0], f_u[last]
    );
    report.record(5, pass, start.elapsed().as_secs_f64(), 600.0, &detail);
    report.note(5, &format!("F(chi) by step: {}", join(&f_chi)));
    out.join("trajectory.json")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn criterion_6(report: &mut Report, dir: &Path) {
    let start = Instant::now();
    let (session, recs) = optimize("protocol2_paper.toml", &dir.join("protocol2"));
    let inputs = session.config.inputs().unwrap().len();
    let first: Vec<f64> = recs.iter().map(|r| r.f_rho[0]).collect();
    let mean: Vec<f64> = recs.iter().map(|r| r.primary_fidelity().unwrap()).collect();
    let f_chi = recs.last().unwrap().f_chi.unwrap();
    let best = first.iter().take(6).copied().fold(0.0f64, f64::max);
    let alpha = session.config.optimizer.learning_rate_ghz2;
    let pass = inputs == 4 && best >= 0.99 && f_chi >= 0.98;
    let detail = format!(
        "alpha = {alpha} GHz^2, {inputs} inputs, {} steps: best F(rho) for the first input {best:.4} (>= 0.99), \
         final F(chi) {f_chi:.4} (>= 0.98)",
        recs.len() - 1
    );
    report.record(6, pass, start.elapsed().as_secs_f64(), 600.0, &detail);
    report.note(6, &format!("F(rho) first input by step: {}", join(&first)));
    report.note(6, &format!("F(rho) mean by step:        {}", join(&mean)));
}

fn criterion_7(report: &mut Report) {
    let start = Instant::now();
    let group = build_clifford_group().unwrap();
    let cfg = RbConfig { sequences: 30, interleaved: true, seed: 7, ..RbConfig::default() };
    let mut parts = Vec::new();
    let mut pass = true;
    for f in [0.97, 0.99] {
        let est = rb_fidelity(&run_rb(&group, &CzImpl::Depolarizing { fidelity: f }, &cfg).unwrap()).unwrap();
        pass &= (est - f).abs() <= 0.005;
        parts.push(format!("F = {f} -> {est:.4}"));
    }
    let detail = format!("30 sequences per length, tolerance 0.005: {}", parts.join(", "));
    report.record(7, pass, start.elapsed().as_secs_f64(), 600.0, &detail);
}

fn criterion_8(report: &mut Report) {
    let start = Instant::now();
    let p = DeviceParams::paper();
    let g = p.coupling;
    let res = p.resonance_amplitude();
    let det: Vec<f64> = (0..41).map(|k| res + mhz_to_rad_per_ns(-40.0 + 2.0 * k as f64)).collect();
    let times: Vec<f64> = (0..121).map(|k| 0.5 * k as f64).collect();
    let tol_res = mhz_to_rad_per_ns(0.2);

    // Analytic chevron with additive readout noise.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scan: Vec<Vec<f64>> = det
        .iter()
        .map(|&mu| {
            times
                .iter()
                .map(|&t| chevron_model(g, res, mu, t) + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let fit = fit_chevron(&scan, &det, &times).unwrap();
    let synth_ok = (fit.coupling / g - 1.0).abs() < 0.01 && (fit.resonance - res).abs() < tol_res;

    // Full qutrit model, with and without a 5 MHz shift of the crossing.
    let closed = closed_model();
    let base = fit_chevron(&chevron_scan(&closed, &det, &times, false).unwrap(), &det, &times).unwrap();
    let mut shifted = p.without_dissipation();
    shifted.anharm_a -= mhz_to_rad_per_ns(5.0);
    let m = SystemModel::new(shifted).unwrap().with_dissipation(false);
    let moved = fit_chevron(&chevron_scan(&m, &det, &times, false).unwrap(), &det, &times).unwrap();
    let want_shift = shifted.resonance_amplitude() - res;
    let shift_err = (moved.resonance - base.resonance) - want_shift;
    let full_ok = (base.coupling / g - 1.0).abs() < 0.01 && shift_err.abs() < tol_res;

    let to_mhz = czgrape_core::rad_per_ns_to_mhz;
    let detail = format!(
        "noisy analytic scan: g error {:.3}%, resonance error {:.3} MHz; full model: g error {:.3}%, \
         5 MHz shift recovered within {:.3} MHz (limits 1%, 0.2 MHz)",
        100.0 * (fit.coupling / g - 1.0),
        to_mhz(fit.resonance - res),
        100.0 * (base.coupling / g - 1.0),
        to_mhz(shift_err.abs())
    );
    report.record(8, synth_ok && full_ok, start.elapsed().as_secs_f64(), 60.0, &detail);
    report.note(8, &format!("full-model crossing sits {:.3} MHz from the bare resonance", to_mhz(base.resonance - res)));
}

fn criterion_9(report: &mut Report, dir: &Path, exact: &Path) {
    let start = Instant::now();
    let mut sink = Vec::new();
    let exact_report = commands::replay(exact, None, None, &mut sink);

    let mut cfg = RunConfig::load(&preset("protocol2_paper.toml")).unwrap();
    cfg.optimizer.max_steps = 2;
    cfg.measurement.mode = czgrape::config::ModeSpec::Sampled;
    cfg.measurement.shots = Some(4000);
    let out = dir.join("sampled");
    let session = Session::new(cfg, &GlobalOptions { output_dir: Some(out.clone()), ..GlobalOptions::default() }).unwrap();
    commands::optimize(&session, &mut sink).unwrap();
    let sampled_report = commands::replay(&out.join("trajectory.json"), None, Some(2), &mut sink);

    let fmt = |r: &Result<commands::ReplayReport, czgrape::CliError>| match r {
        Ok(r) => format!("{} steps, max deviation {:.1e} (tolerance {:.1e})", r.steps, r.max_deviation, r.tolerance),
        Err(e) => e.to_string(),
    };
    let detail = format!("exact: {}; sampled: {}", fmt(&exact_report), fmt(&sampled_report));
    let pass = exact_report.is_ok() && sampled_report.is_ok();
    report.record(9, pass, start.elapsed().as_secs_f64(), 600.0, &detail);
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut report = Report { failed: Vec::new() };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);
    criterion_4(&mut report);
    let trajectory = criterion_5(&mut report, dir.path());
    criterion_6(&mut report, dir.path());
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report, dir.path(), &trajectory);
    if report.failed.is_empty() {
        println!("acceptance: all criteria pass");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: failing criteria {:?}", report.failed);
    // A failing criterion must not stop the rest of `cargo test`.
    if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
