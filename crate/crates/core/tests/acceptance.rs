//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `-- --nocapture` to see them).

use fibersampler::cli::{bundled_dataset, cmd_fit, cmd_test, NAVY_FULL, NAVY_OFFICER};
use fibersampler::fiber::{
    connected_components, enumerate_fiber, exact_conditional_distribution,
    verify_relaxed_connectivity, DEFAULT_FIBER_CAP,
};
use fibersampler::model::{
    build_design_matrix, chi_square_quantile, degrees_of_freedom, IPFP_MAX_ITER, IPFP_TOL,
};
use fibersampler::moves::{enumerate_basic_moves, fixtures, replay_decomposition, ReplayError};
use fibersampler::sampler::{
    burn_in_for_fraction, run_chain, run_chain_with_observer, ChainConfig,
};
use fibersampler::table::{Dims, RelaxDepth, Table3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn verdict(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion:2} ({name}): {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

/// The displayed 3x3x3 table with scaled permutation slices.
fn diagonal_3x3x3() -> Table3D {
    let dims = Dims::new(3, 3, 3);
    let mut cells = vec![0i64; 27];
    for i in 0..3 {
        for j in 0..3 {
            cells[dims.index(i, j, (i + j) % 3)] = 3;
        }
    }
    Table3D::new(dims, cells).unwrap()
}

#[test]
fn criterion_01_design_matrix_golden() {
    // the published 12x8 matrix, with row blocks ordered ij, ik, jk;
    // this crate orders blocks jk, ik, ij, so compare block-reversed
    #[rustfmt::skip]
    let published: [[u8; 8]; 12] = [
        [1,1,0,0,0,0,0,0],
        [0,0,1,1,0,0,0,0],
        [0,0,0,0,1,1,0,0],
        [0,0,0,0,0,0,1,1],
        [1,0,1,0,0,0,0,0],
        [0,1,0,1,0,0,0,0],
        [0,0,0,0,1,0,1,0],
        [0,0,0,0,0,1,0,1],
        [1,0,0,0,1,0,0,0],
        [0,1,0,0,0,1,0,0],
        [0,0,1,0,0,0,1,0],
        [0,0,0,1,0,0,0,1],
    ];
    let a = build_design_matrix(Dims::new(2, 2, 2));
    assert_eq!((a.rows(), a.cols()), (12, 8));
    // published row r of block b maps to this crate's block (2 - b), same
    // offset inside the block
    let mut equal = true;
    for block in 0..3 {
        for offset in 0..4 {
            let ours = a.row((2 - block) * 4 + offset);
            let theirs = &published[block * 4 + offset];
            if ours != theirs {
                equal = false;
            }
        }
    }
    verdict(
        1,
        "design matrix golden",
        equal,
        "12x8 matrix matches exactly",
    );
}

#[test]
fn criterion_02_ipfp_golden() {
    // The printed MLE tables are reproduced by fitting the full 19x6x2
    // table (the officer-only 10x6x2 fit has different race x gender
    // margins and therefore different fitted values; see README).
    let full = bundled_dataset(NAVY_FULL).unwrap();
    let fitted = fibersampler::ipfp_fit(&full.table, IPFP_TOL, IPFP_MAX_ITER).unwrap();
    let rank = |name: &str| full.axis_labels[0].iter().position(|r| r == name).unwrap();
    let race = |name: &str| full.axis_labels[1].iter().position(|r| r == name).unwrap();
    // 16 spot cells across both genders from the two printed officer MLE
    // tables
    let spots: [(&str, &str, usize, f64); 16] = [
        ("Adm.", "Nat. Am.", 0, 0.92),
        ("O-4", "Nat. Am.", 0, 81.65),
        ("O-6", "Asian", 0, 107.26),
        ("O-5", "Af. Am.", 0, 346.00),
        ("W-3", "Pac. Isl.", 0, 42.01),
        ("O-1", "Multi-Race", 0, 350.35),
        ("O-3", "White", 0, 11618.57),
        ("Adm.", "White", 0, 191.60),
        ("Adm.", "Nat. Am.", 1, 0.08),
        ("O-3", "Nat. Am.", 1, 48.37),
        ("O-4", "Asian", 1, 119.12),
        ("W-2", "Af. Am.", 1, 32.57),
        ("O-5", "Pac. Isl.", 1, 49.52),
        ("O-2", "Multi-Race", 1, 123.65),
        ("O-3", "White", 1, 2971.43),
        ("W-4", "White", 1, 12.19),
    ];
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (rk, rc, gender, printed) in spots {
        let got = fitted.get(rank(rk), race(rc), gender);
        let tol = if printed > 1000.0 { 0.5 } else { 0.01 };
        let err = (got - printed).abs();
        worst = worst.max(err / tol);
        if err > tol {
            pass = false;
            println!("  spot ({rk}, {rc}, gender {gender}): {got:.4} vs printed {printed}");
        }
    }
    // the officer-only fit reproduces the printed value where the two fits
    // agree (the smallest cell)
    let officer = bundled_dataset(NAVY_OFFICER).unwrap();
    let officer_fit = fibersampler::ipfp_fit_default(&officer.table).unwrap();
    let adm_nat_male = officer_fit.get(0, 0, 0);
    pass &= (adm_nat_male - 0.92).abs() <= 0.01;
    verdict(
        2,
        "IPFP golden",
        pass,
        &format!(
            "16 spot cells, worst error {:.2}% of tolerance",
            worst * 100.0
        ),
    );
}

#[test]
fn criterion_03_chi_square_goldens() {
    let officer = bundled_dataset(NAVY_OFFICER).unwrap();
    let (officer_report, _) = cmd_fit(&officer, IPFP_TOL, IPFP_MAX_ITER).unwrap();
    let full = bundled_dataset(NAVY_FULL).unwrap();
    let (full_report, _) = cmd_fit(&full, IPFP_TOL, IPFP_MAX_ITER).unwrap();

    let pass = (officer_report.chi_sq - 90.23).abs() <= 0.01
        && (full_report.chi_sq - 2775.15).abs() <= 0.5
        && officer_report.df == 45
        && full_report.df == 90
        && degrees_of_freedom(Dims::new(10, 6, 2)) == 45
        && degrees_of_freedom(Dims::new(19, 6, 2)) == 90;
    verdict(
        3,
        "chi-square goldens",
        pass,
        &format!(
            "chi2(10x6x2) = {:.4}, chi2(19x6x2) = {:.4}, df = {}/{}",
            officer_report.chi_sq, full_report.chi_sq, officer_report.df, full_report.df
        ),
    );
}

#[test]
fn criterion_04_isolated_table_reconnects_at_floor_one() {
    let table = diagonal_3x3x3();
    let margins = table.margins();
    let moves = enumerate_basic_moves(table.dims()).unwrap();
    assert_eq!(moves.len(), 27);

    let fiber0 = enumerate_fiber(&margins, RelaxDepth::ZERO, DEFAULT_FIBER_CAP).unwrap();
    let idx = fiber0
        .index_of(&table)
        .expect("table lies in its own fiber");
    let components0 = connected_components(&fiber0, &moves);
    let singleton = components0
        .iter()
        .find(|c| c.contains(&idx))
        .map(|c| c.len() == 1)
        .unwrap_or(false);

    let report =
        verify_relaxed_connectivity(&margins, &moves, RelaxDepth::ONE, DEFAULT_FIBER_CAP).unwrap();

    let pass = singleton && report.nonneg_connected && report.fiber_size == fiber0.len();
    verdict(
        4,
        "3x3x3 counterexample",
        pass,
        &format!(
            "floor-0 fiber {} tables ({} components, table isolated: {}); floor-1 fiber {} tables, non-negative connected: {}",
            fiber0.len(),
            components0.len(),
            singleton,
            report.relaxed_fiber_size,
            report.nonneg_connected
        ),
    );
}

#[test]
fn criterion_05_decomposition_replay() {
    let mut detail = String::new();
    let mut pass = true;
    for (name, build) in [
        ("b1", fixtures::b1_decomposition as fn(RelaxDepth) -> _),
        ("b2", fixtures::b2_decomposition as fn(RelaxDepth) -> _),
    ] {
        let ok = replay_decomposition(&build(RelaxDepth::ONE));
        let blocked = replay_decomposition(&build(RelaxDepth::ZERO));
        match (&ok, &blocked) {
            (Ok(report), Err(ReplayError::FloorViolation { .. })) => {
                detail.push_str(&format!(
                    "{name}: floor-1 ok, {} cells reached -1; floor-0 blocked. ",
                    report.cells_ever_negative
                ));
                pass &= report.cells_ever_negative >= 3 && report.min_intermediate_cell == -1;
            }
            other => {
                pass = false;
                detail.push_str(&format!("{name}: unexpected outcome {other:?}. "));
            }
        }
    }
    verdict(5, "decomposition replay", pass, detail.trim_end());
}

#[test]
fn criterion_06_two_layer_connectivity_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_210_120);
    let shapes = [(2, 2), (2, 3), (2, 4), (3, 3), (3, 4), (4, 4)];
    let mut verified = 0usize;
    let mut skipped = 0usize;
    let mut disconnected = 0usize;
    let mut attempts = 0usize;
    while verified < 30 && attempts < 300 {
        attempts += 1;
        let (j, k) = shapes[attempts % shapes.len()];
        let dims = Dims::new(2, j, k);
        let cells: Vec<i64> = (0..dims.cell_count())
            .map(|_| rng.gen_range(0..=3))
            .collect();
        let table = Table3D::new(dims, cells).unwrap();
        let moves = enumerate_basic_moves(dims).unwrap();
        match verify_relaxed_connectivity(&table.margins(), &moves, RelaxDepth::ONE, 500_000) {
            Ok(report) => {
                verified += 1;
                if !report.nonneg_connected {
                    disconnected += 1;
                    println!("  disconnected witness at dims {dims}: {:?}", table.cells());
                }
            }
            Err(fibersampler::FiberError::FiberTooLarge { .. }) => skipped += 1,
            Err(other) => panic!("unexpected enumeration failure: {other}"),
        }
    }
    let pass = verified == 30 && disconnected == 0;
    verdict(
        6,
        "2xJxK sweep",
        pass,
        &format!("{verified} margin sets verified connected at floor 1 ({skipped} over cap, {disconnected} disconnected)"),
    );
}

#[test]
fn criterion_07_all_ones_hypothesis_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(59_705);
    let dims_list = [
        Dims::new(2, 2, 2),
        Dims::new(2, 2, 3),
        Dims::new(2, 3, 3),
        Dims::new(3, 3, 3),
        Dims::new(2, 2, 4),
    ];
    let mut checked = 0usize;
    let mut hypothesis_failures = 0usize;
    let mut counterexamples = 0usize;
    for dims in dims_list {
        let moves = enumerate_basic_moves(dims).unwrap();
        // hypothesis: basic moves connect the fiber containing the all-ones
        // table
        let ones = Table3D::ones(dims);
        let ones_fiber =
            enumerate_fiber(&ones.margins(), RelaxDepth::ZERO, DEFAULT_FIBER_CAP).unwrap();
        let ones_connected = connected_components(&ones_fiber, &moves).len() == 1;
        if !ones_connected {
            hypothesis_failures += 1;
            // for 3x3x3 this is exactly the isolated-table phenomenon
            assert_eq!(dims, Dims::new(3, 3, 3), "unexpected hypothesis failure");
            continue;
        }
        // conclusion: with margins dominating the all-ones margins, the
        // floor-1 graph connects all non-negative tables
        for _ in 0..4 {
            let cells: Vec<i64> = (0..dims.cell_count())
                .map(|_| rng.gen_range(1..=3))
                .collect();
            let table = Table3D::new(dims, cells).unwrap();
            let report = verify_relaxed_connectivity(
                &table.margins(),
                &moves,
                RelaxDepth::ONE,
                DEFAULT_FIBER_CAP,
            )
            .unwrap();
            checked += 1;
            if !report.nonneg_connected {
                counterexamples += 1;
                println!("  counterexample at dims {dims}: {:?}", table.cells());
            }
        }
    }
    let pass = counterexamples == 0 && checked >= 16 && hypothesis_failures == 1;
    verdict(
        7,
        "all-ones hypothesis sweep",
        pass,
        &format!("{checked} margin sets with the hypothesis verified, {counterexamples} counterexamples, {hypothesis_failures} dims skipped (hypothesis fails)"),
    );
}

#[test]
fn criterion_08_sampler_matches_exact_oracle() {
    let cases: [(&str, Dims, Vec<i64>); 3] = [
        ("2x2x2", Dims::new(2, 2, 2), vec![3, 1, 1, 3, 1, 3, 3, 1]),
        (
            "2x2x3",
            Dims::new(2, 2, 3),
            vec![2, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 0],
        ),
        (
            "2x3x3",
            Dims::new(2, 3, 3),
            vec![2, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 1, 0, 2, 0, 2, 1],
        ),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (name, dims, cells) in cases {
        let observed = Table3D::new(dims, cells).unwrap();
        let fiber =
            enumerate_fiber(&observed.margins(), RelaxDepth::ZERO, DEFAULT_FIBER_CAP).unwrap();
        let exact = exact_conditional_distribution(&fiber).unwrap();
        let chi_obs = fibersampler::table::chi_square(&observed, &exact.fitted).unwrap();
        let exact_p = exact.p_value(chi_obs);

        // one million raw steps, recording every post-burn-in step
        let mut config = ChainConfig::new(900_000, 8_675_309);
        config.burn_in = 100_000;
        let mut visits: HashMap<Vec<i64>, usize> = HashMap::new();
        let result = run_chain_with_observer(&observed, &config, |state| {
            *visits.entry(state.to_vec()).or_default() += 1;
        })
        .unwrap();

        let p_err = (result.p_value_estimate - exact_p).abs();
        let n = result.chi_sq_samples.len() as f64;
        let mut tv = 0.0;
        for (idx, t) in fiber.tables().iter().enumerate() {
            let freq = visits.get(t.cells()).copied().unwrap_or(0) as f64 / n;
            tv += (freq - exact.weights[idx]).abs();
        }
        tv /= 2.0;
        let ok = p_err <= 0.02 && tv < 0.05;
        pass &= ok;
        detail.push_str(&format!(
            "{name}: fiber {} tables, |p - exact| = {:.4}, TV = {:.4}. ",
            fiber.len(),
            p_err,
            tv
        ));
    }
    verdict(8, "sampler vs oracle", pass, detail.trim_end());
}

#[test]
fn criterion_09_navy_protocol_reproduction() {
    let officer = bundled_dataset(NAVY_OFFICER).unwrap();
    let config = ChainConfig {
        n_samples: 10_000,
        burn_in: burn_in_for_fraction(10_000, 25, 0.25),
        thin: 25,
        floor: RelaxDepth::ONE,
        burn_in_floor: RelaxDepth::ONE,
        neg_penalty: 0.1,
        seed: 20_210_120,
    };
    let result = run_chain(&officer.table, &config).unwrap();
    let n = result.chi_sq_samples.len();
    let mean: f64 = result.chi_sq_samples.iter().sum::<f64>() / n as f64;

    let mut sorted = result.chi_sq_samples.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * n as f64) as usize).min(n - 1)];
    let (q05, q95) = (q(0.05), q(0.95));
    let (ref05, ref95) = (chi_square_quantile(0.05, 45), chi_square_quantile(0.95, 45));

    let p_ok = result.p_value_estimate <= 0.01;
    let mean_ok = (mean - 45.0).abs() <= 3.0;
    let q_ok = (q05 - ref05).abs() <= 0.15 * ref05 && (q95 - ref95).abs() <= 0.15 * ref95;
    let pass = p_ok && mean_ok && q_ok;
    verdict(
        9,
        "sampling protocol reproduction",
        pass,
        &format!(
            "p = {:.5} (corrected {:.5}), mean chi2 = {:.2}, q05 = {:.2} (ref {:.2}), q95 = {:.2} (ref {:.2}), {} samples, acceptance {:.3}",
            result.p_value_estimate,
            result.p_value_corrected,
            mean,
            q05,
            ref05,
            q95,
            ref95,
            n,
            result.acceptance_rate
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let officer = bundled_dataset(NAVY_OFFICER).unwrap();
    let mut config = ChainConfig::new(2_000, 7);
    config.burn_in = 5_000;
    config.thin = 5;
    let (report_a, pooled_a) = cmd_test(&officer, &config, 2).unwrap();
    let (report_b, pooled_b) = cmd_test(&officer, &config, 2).unwrap();
    let json_a = serde_json::to_string_pretty(&report_a).unwrap();
    let json_b = serde_json::to_string_pretty(&report_b).unwrap();
    let samples_a = serde_json::to_string(&pooled_a).unwrap();
    let samples_b = serde_json::to_string(&pooled_b).unwrap();
    let pass = json_a == json_b && samples_a == samples_b;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "{} bytes of report JSON bit-identical across runs",
            json_a.len()
        ),
    );
}
