//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! The tests hold a shared lock so that they run one at a time; criterion 6
//! compares wall-clock timings and must not compete with the others for the CPU.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cutspline::assembly::{assemble, Assembler, Discretization, Scheme};
use cutspline::cutgeom::{HalfSpaceInterface, Side, TensorSpace};
use cutspline::harness::{assemble_timed, compare, run, sweep, RunConfig, REFERENCE_NORMAL, REFERENCE_POINT};
use cutspline::projection::{condition_estimate, l2_error, scatter, solve_cg, CG_TOLERANCE};
use cutspline::quadrature::{build_dwq_rule, build_wq_rules, default_cut_order, omega_volume, BasisTable, PointSuperset};
use cutspline::splines::BSplineBasis;
use cutspline::stabilization::{build_extension, classify_stability};
use rand::{Rng, SeedableRng};

static SERIAL: Mutex<()> = Mutex::new(());

/// Writes to the stdout handle directly so the line survives libtest's output capture.
fn report(n: usize, ok: bool, detail: String) {
    let line = format!("criterion {n}: {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).expect("stdout is writable");
    assert!(ok, "criterion {n} failed: {detail}");
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("runtime {:.1}s (limit {}s)", t.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------------------
// independent oracles

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
fn gauss(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Textbook Cox-de Boor recursion on the open uniform knot vector of `[-1, 1]`.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = knots[i + 1] == *knots.last().unwrap() && knots[i] < knots[i + 1];
        return if (knots[i] <= x && x < knots[i + 1]) || (last && x == knots[i + 1]) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
    }
    v
}

fn open_knots(p: usize, h: usize) -> Vec<f64> {
    let mut k = vec![-1.0; p + 1];
    k.extend((1..h).map(|e| -1.0 + 2.0 * e as f64 / h as f64));
    k.extend(vec![1.0; p + 1]);
    k
}

/// `∫_lo^hi B_i B_j` by span-wise Gauss on the recursive definition.
fn pair_integral(knots: &[f64], p: usize, i: usize, j: usize, lo: f64, hi: f64) -> f64 {
    let g = gauss(p + 2);
    let mut s = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0].max(lo), w[1].min(hi));
        if b <= a {
            continue;
        }
        for &(t, wt) in &g {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * t;
            s += 0.5 * (b - a) * wt * cox_de_boor(knots, i, p, x) * cox_de_boor(knots, j, p, x);
        }
    }
    s
}

/// Volume of `{x ∈ [lo, hi]^3 : n·(x − q) ≤ 0}` by inclusion-exclusion over the box corners.
fn halfspace_box_volume(lo: f64, hi: f64, q: [f64; 3], n: [f64; 3]) -> f64 {
    let len = hi - lo;
    // local coordinates y ∈ [0, len]^3 with all normal components positive
    let mut m = [0.0; 3];
    let mut c = n.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() - n.iter().map(|a| a * lo).sum::<f64>();
    for d in 0..3 {
        if n[d] < 0.0 {
            m[d] = -n[d];
            c += m[d] * len;
        } else {
            m[d] = n[d];
        }
    }
    let mut s = 0.0;
    for v in 0..8u32 {
        let corner: f64 = (0..3).map(|d| if v >> d & 1 == 1 { m[d] * len } else { 0.0 }).sum();
        let sign = if v.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * (c - corner).max(0.0).powi(3);
    }
    s / (6.0 * m[0] * m[1] * m[2])
}

fn reference_config(p: usize, h: usize, scheme: Scheme) -> RunConfig {
    RunConfig::new(3, p, h, scheme)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_quadrature_exactness() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (mut worst_wq, mut worst_dwq) = (0.0f64, 0.0f64);
    let mut wrong_side_nonzero = 0usize;
    let mut rules = 0usize;
    for p in 2..=6 {
        for h in [4, 8] {
            let basis = BSplineBasis::uniform(p, h, -1.0, 1.0).unwrap();
            let knots = open_knots(p, h);
            let sup = PointSuperset::for_basis(&basis);
            let table = BasisTable::new(&basis, &sup);
            let wq = build_wq_rules(&basis, &sup).unwrap();
            let breaks = basis.breaks().to_vec();
            let nf = basis.num_functions();
            for rule in &wq {
                let i = rule.test;
                let exact: Vec<f64> = (0..nf).map(|j| pair_integral(&knots, p, i, j, -1.0, 1.0)).collect();
                let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (j, ex) in exact.iter().enumerate() {
                    let got = rule.apply(|q| table.value(j, q));
                    worst_wq = worst_wq.max((got - ex).abs() / scale);
                }
                rules += 1;

                let (e0, e1) = basis.support(i);
                for cut in e0 + 1..=e1 {
                    let delta = breaks[cut];
                    for side in [Side::Below, Side::Above] {
                        let dwq = build_dwq_rule(&basis, &sup, rule, delta, side).unwrap();
                        let (lo, hi) = match side {
                            Side::Below => (breaks[e0], delta),
                            Side::Above => (delta, breaks[e1 + 1]),
                        };
                        let good = |q: usize| {
                            let e = sup.element_of(q);
                            match side {
                                Side::Below => e < cut,
                                Side::Above => e >= cut,
                            }
                        };
                        for (&q, &w) in dwq.rule.points.iter().zip(&dwq.rule.weights) {
                            if !good(q) && w != 0.0 {
                                wrong_side_nonzero += 1;
                            }
                        }
                        let exact: Vec<f64> = (0..nf).map(|j| pair_integral(&knots, p, i, j, lo, hi)).collect();
                        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        for (j, ex) in exact.iter().enumerate() {
                            let got = dwq.rule.apply(|q| table.value(j, q));
                            worst_dwq = worst_dwq.max((got - ex).abs() / scale);
                            // trial functions living only on the wrong side integrate to exactly zero
                            let (sj, ej) = basis.support(j);
                            let wrong_only = match side {
                                Side::Below => sj >= cut,
                                Side::Above => ej < cut,
                            };
                            if wrong_only && got != 0.0 {
                                wrong_side_nonzero += 1;
                            }
                        }
                        rules += 1;
                    }
                }
            }
        }
    }
    let (fast, rt) = within(start, Duration::from_secs(10));
    let ok = worst_wq <= 1e-11 && worst_dwq <= 1e-11 && wrong_side_nonzero == 0 && fast;
    report(
        1,
        ok,
        format!(
            "{rules} rules; max relative moment error WQ {worst_wq:.2e}, DWQ {worst_dwq:.2e}; nonzero wrong-side values {wrong_side_nonzero}; {rt}"
        ),
    );
}

#[test]
fn criterion_2_scheme_equivalence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [2, 3, 4] {
        let c = compare(&reference_config(p, 8, Scheme::Ref)).unwrap();
        let errs: Vec<f64> = c.runs.iter().map(|r| r.error_rel_l2).collect();
        let mut err_dev = 0.0f64;
        for a in &errs {
            for b in &errs {
                err_dev = err_dev.max((a - b).abs() / b);
            }
        }
        ok &= c.max_matrix_deviation <= 1e-10 && err_dev <= 0.01;
        detail.push(format!("p={p}: matrix {:.1e}, error {:.1e}", c.max_matrix_deviation, err_dev));
    }
    let (fast, rt) = within(start, Duration::from_secs(120));
    report(2, ok && fast, format!("{}; {rt}", detail.join("; ")));
}

#[test]
fn criterion_3_convergence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for (p, hs, lo, hi) in [(2usize, vec![4usize, 8, 16, 32], 2.7, 3.3), (3, vec![4, 8, 16], 3.6, 4.4)] {
        let rows = sweep(&reference_config(p, 4, Scheme::Dwq), &[p], &hs).unwrap();
        let errs: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.3e}", r.outcome.as_ref().map(|o| o.error_rel_l2).unwrap_or(f64::NAN)))
            .collect();
        let order = rows.last().and_then(|r| r.order).unwrap_or(f64::NAN);
        ok &= (lo..=hi).contains(&order);
        detail.push(format!("p={p}: errors [{}], last order {order:.3} in [{lo}, {hi}]", errs.join(", ")));
    }
    let (fast, rt) = within(start, Duration::from_secs(600));
    report(3, ok && fast, format!("{}; {rt}", detail.join("; ")));
}

#[test]
fn criterion_4_reproduction() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for p in [2usize, 3] {
        let space = TensorSpace::uniform(3, p, 8, -1.0, 1.0).unwrap();
        let plane = HalfSpaceInterface::reference();
        let disc = Discretization::new(space, plane, None).unwrap();
        let m = assemble(&disc, Scheme::Dwq, &|_| 1.0).unwrap().matrix;
        let ext = build_extension(&disc, &classify_stability(&disc)).unwrap();
        assert!(!ext.extensions.is_empty());
        let mut loads = Assembler::new(&disc, Scheme::Ref).unwrap();
        for a in 0..=p as i32 {
            for b in 0..=p as i32 {
                for c in 0..=p as i32 {
                    let f = move |x: &[f64]| x[0].powi(a) * x[1].powi(b) * x[2].powi(c);
                    let rhs = loads.rhs(&f).unwrap();
                    let (me, be) = ext.apply(&m, &rhs).unwrap();
                    let sol = solve_cg(&me, &be, CG_TOLERANCE, None).unwrap();
                    assert!(sol.converged);
                    let full = scatter(&disc.active, disc.space.num_functions(), &ext.expand(&sol.solution).unwrap());
                    worst = worst.max(l2_error(&disc, &full, &f).unwrap().relative);
                    count += 1;
                }
            }
        }
    }
    let (fast, rt) = within(start, Duration::from_secs(60));
    report(4, worst <= 1e-9 && fast, format!("{count} monomials, max relative L2 error {worst:.2e}; {rt}"));
}

#[test]
fn criterion_5_flop_scaling() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (mut lp, mut row, mut elem) = (Vec::new(), Vec::new(), Vec::new());
    let one = |_: &[f64]| 1.0;
    for p in 2..=6usize {
        let disc = reference_config(p, 16, Scheme::Dwq).discretization().unwrap();
        let fgrid = disc.space.function_grid();
        let ext = fgrid.ext;
        let wq = assemble(&disc, Scheme::Dwq, &one).unwrap();
        // representative row: the interior function farthest from the domain boundary
        let (_, ops) = *wq
            .flops
            .per_row
            .iter()
            .max_by_key(|(g, _)| {
                let i = fgrid.multi(*g);
                ((0..3).map(|d| i[d].min(ext[d] - 1 - i[d])).min().unwrap(), usize::MAX - g)
            })
            .unwrap();
        let r = assemble(&disc, Scheme::Ref, &one).unwrap();
        let per_element = r.flops.interior_elements as f64 / r.flops.interior_element_count as f64;
        lp.push((p as f64).ln());
        row.push((ops as f64).ln());
        elem.push(per_element.ln());
    }
    let (s_row, s_elem) = (slope(&lp, &row), slope(&lp, &elem));
    let (fast, rt) = within(start, Duration::from_secs(600));
    let ok = (3.3..=4.7).contains(&s_row) && (5.0..=7.0).contains(&s_elem) && s_elem - s_row >= 1.5 && fast;
    report(
        5,
        ok,
        format!(
            "row exponent {s_row:.3} in [3.3, 4.7], element-loop exponent {s_elem:.3} in [5, 7], gap {:.3} >= 1.5; {rt}",
            s_elem - s_row
        ),
    );
}

#[test]
fn criterion_6_dwq_ordering() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [2usize, 3, 6] {
        let disc = reference_config(p, 16, Scheme::Dwq).discretization().unwrap();
        let hyb = assemble_timed(&disc, Scheme::Hybrid, 5).unwrap().timing.cut_regular;
        let dwq = assemble_timed(&disc, Scheme::Dwq, 5).unwrap().timing.cut_regular;
        let ratio = dwq / hyb;
        // the asserted part is the ordering; the two-sided 10% band at low degree is a magnitude
        // statement and is reported only
        let (pass, note) = if p == 6 {
            (dwq <= hyb, "needs ratio <= 1".to_string())
        } else {
            let band = (dwq - hyb).abs() <= 0.1 * hyb;
            (dwq <= 1.1 * hyb, format!("needs ratio <= 1.1; within 10% band: {band} (informational)"))
        };
        ok &= pass;
        detail.push(format!("p={p}: dwq {dwq:.4}s vs hybrid {hyb:.4}s, ratio {ratio:.2}, {note}"));
    }
    let (fast, rt) = within(start, Duration::from_secs(900));
    report(6, ok && fast, format!("{}; {rt}", detail.join("; ")));
}

#[test]
fn criterion_7_conditioning() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (p, h) = (2usize, 8usize);
    let base = reference_config(p, h, Scheme::Dwq);
    let plane = HalfSpaceInterface::reference();
    let n = plane.unit_normal().to_vec();
    // translate the plane until a mesh vertex sits 1e-6 inside it; the vertex is chosen
    // so that a whole B-spline support fits on its outer side and sees only the sliver
    let step = 2.0 / h as f64;
    let mut nearest = (f64::MAX, 0.0);
    for i in 0..=h {
        for j in 0..=h {
            for k in 0..=h {
                let x = [-1.0 + step * i as f64, -1.0 + step * j as f64, -1.0 + step * k as f64];
                let fits = (0..3).all(|d| (x[d] + (p + 1) as f64 * step * n[d].signum()).abs() <= 1.0 + 1e-12);
                let s = plane.signed_distance(&x);
                if fits && s.abs() < nearest.0 {
                    nearest = (s.abs(), s);
                }
            }
        }
    }
    let shift = nearest.1 + 1e-6;
    let mut sliver = base.clone();
    sliver.plane_point = REFERENCE_POINT.iter().zip(&n).map(|(q, nd)| q + shift * nd).collect();
    assert_eq!(sliver.plane_normal, REFERENCE_NORMAL.to_vec());

    let plain = run(&base).unwrap().report;
    let out = run(&sliver).unwrap();
    let disc = sliver.discretization().unwrap();
    let ext = build_extension(&disc, &classify_stability(&disc)).unwrap();
    let zeros = vec![0.0; disc.active.len()];
    let (me, _) = ext.apply(&out.matrix, &zeros).unwrap();
    let k_stab = condition_estimate(&me, me.nrows(), false).unwrap();
    let k_raw = condition_estimate(&out.matrix, out.matrix.nrows(), false).unwrap();
    let k_stab_j = condition_estimate(&me, me.nrows(), true).unwrap();
    let k_raw_j = condition_estimate(&out.matrix, out.matrix.nrows(), true).unwrap();
    let iters = out.report.cg_iterations;
    let (fast, rt) = within(start, Duration::from_secs(120));
    let ok = out.report.cg_converged && iters <= 5 * plain.cg_iterations && k_raw >= 1e3 * k_stab && fast;
    report(
        7,
        ok,
        format!(
            "CG iterations {iters} (sliver) vs {} (reference), converged {}; condition unstabilized {k_raw:.2e} vs stabilized {k_stab:.2e} \
             (Jacobi-scaled: {k_raw_j:.2e} vs {k_stab_j:.2e}); {rt}",
            plain.cg_iterations, out.report.cg_converged
        ),
    );
}

#[test]
fn criterion_8_geometry_oracle() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(20240917);
    let space = TensorSpace::uniform(3, 2, 8, -1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let q: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.6..0.6));
        let n: [f64; 3] = loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            if v.iter().all(|c: &f64| c.abs() > 0.05) {
                break v;
            }
        };
        let plane = HalfSpaceInterface::new(q.to_vec(), n.to_vec()).unwrap();
        let cls = cutspline::cutgeom::MeshClassification::new(&space, &plane).unwrap();
        let vol = omega_volume(&space, &cls, &plane, default_cut_order(2)).unwrap();
        let exact = halfspace_box_volume(-1.0, 1.0, q, n);
        worst = worst.max((vol - exact).abs() / exact);
    }
    let (fast, rt) = within(start, Duration::from_secs(10));
    report(8, worst <= 1e-10 && fast, format!("10 random planes, max relative volume error {worst:.2e}; {rt}"));
}
