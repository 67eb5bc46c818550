use covadj::data::{expand_covariates, read_csv, stratum_summaries, write_csv, ColumnKind, CsvSchema, ExpansionSpec};
use covadj::estimators::{EstimatorKind, TreatmentEffectEstimate};
use covadj::rng::{stream, Purpose};
use covadj::sim::{
    effect_oracle, emit_report, generate, run_replications, true_tau_with_oracle, ReportFormat, ORACLE_DRAWS,
};
use covadj::variance::{asymptotic_delta_common, df_adjust, variance_components};
use covadj::{estimators, Matrix, ModelId, ModelSpec, RandomizationScheme, SimConfig, TrialDataset};
use rand::Rng;

fn schema() -> CsvSchema {
    CsvSchema {
        outcome: "outcome".into(),
        assignment: "assignment".into(),
        stratum: "stratum".into(),
        covariates: None,
    }
}

fn observed(id: ModelId, p: usize, n: usize, seed: u64) -> TrialDataset {
    let m = ModelSpec::new(id, p).unwrap();
    let pop = generate(&m, n, &mut stream(seed, 0, Purpose::Data)).unwrap();
    let s = RandomizationScheme::stratified_block(4, 0.5).unwrap();
    let a = covadj::randomization::assign_all(&s, &pop.units(), seed).unwrap();
    pop.reveal(&a).unwrap()
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let ds = observed(ModelId::Model2, 8, 150, 1);
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &schema()).unwrap();
    assert_eq!(back.outcomes(), ds.outcomes());
    assert_eq!(back.treated(), ds.treated());
    assert_eq!(back.decoded_strata(), ds.decoded_strata());
    assert_eq!(back.covariates(), ds.covariates());
    assert_eq!(back.covariate_names(), ds.covariate_names());
}

#[test]
fn assignment_outside_zero_one_is_rejected() {
    let text = "outcome,assignment,stratum,x\n1,1,a,0\n2,2,a,1\n";
    let err = read_csv(text.as_bytes(), &schema()).unwrap_err().to_string();
    assert!(err.contains("row 2") || err.contains('2'), "{err}");
}

#[test]
fn expansion_term_counts() {
    // Two continuous and one binary column: 3 + 3 + 1 powers, then three
    // pairwise products.
    let mut rng = stream(5, 0, Purpose::Other);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![rng.random::<f64>(), rng.random::<f64>() * 3.0, (i % 2) as f64])
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let names = vec!["a".to_string(), "b".into(), "d".into()];
    let spec = ExpansionSpec {
        kinds: vec![ColumnKind::Continuous, ColumnKind::Continuous, ColumnKind::Binary],
        cross: true,
    };
    let e = expand_covariates(&x, &names, &spec).unwrap();
    assert_eq!(e.matrix.cols(), e.names.len());
    assert_eq!(e.names.len(), 10);
}

#[test]
fn summaries_add_up() {
    let ds = observed(ModelId::Model3, 5, 400, 3);
    let s = stratum_summaries(&ds);
    assert_eq!(s.iter().map(|x| x.n).sum::<usize>(), 400);
    assert_eq!(s.iter().map(|x| x.n_treated).sum::<usize>(), ds.n_treated());
    assert!((s.iter().map(|x| x.proportion).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn model3_stratum_proportions_match_the_law() {
    let m = ModelSpec::new(ModelId::Model3, 5).unwrap();
    let n = 100_000;
    let pop = generate(&m, n, &mut stream(12, 0, Purpose::Data)).unwrap();
    let mut counts = [0usize; 12];
    for u in pop.units() {
        counts[u.stratum] += 1;
    }
    let x4 = [0.3, 0.6, 0.1];
    for (k, &c) in counts.iter().enumerate() {
        let p = 0.25 * x4[k % 3];
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "stratum {k}");
    }
}

#[test]
fn extra_covariates_have_lag_one_correlation_one_half() {
    let m = ModelSpec::new(ModelId::Model2, 10).unwrap();
    let pop = generate(&m, 20_000, &mut stream(6, 0, Purpose::Data)).unwrap();
    let x = pop.covariates();
    let (a, b) = (x.col(5), x.col(6));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>();
    let va: f64 = a.iter().map(|u| (u - ma) * (u - ma)).sum();
    let vb: f64 = b.iter().map(|v| (v - mb) * (v - mb)).sum();
    assert!((cov / (va * vb).sqrt() - 0.5).abs() < 0.03);
}

#[test]
fn model2_oracle_agrees_with_the_closed_form() {
    let m = ModelSpec::builtin(ModelId::Model2).unwrap();
    let (tau, oracle) = true_tau_with_oracle(&m);
    let oracle = oracle.unwrap();
    assert_eq!(oracle.draws, ORACLE_DRAWS);
    assert!(oracle.se < 0.01, "se {}", oracle.se);
    assert!((tau - -83.378571).abs() < 3.0 * oracle.se + 1e-4, "{tau}");
    // A second seed stays within the combined error.
    let other = effect_oracle(m.law(), 2_000_000, 77);
    assert!((other.value - tau).abs() < 4.0 * (other.se.powi(2) + oracle.se.powi(2)).sqrt());
}

fn small_config(threads: Option<usize>) -> SimConfig {
    let m = ModelSpec::new(ModelId::Model1, 12).unwrap();
    let s = RandomizationScheme::biased_coin(0.75, 0.5).unwrap();
    let mut cfg = SimConfig::new(m, s, 120, 40, 5);
    cfg.threads = threads;
    cfg
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let one = emit_report(&run_replications(&small_config(Some(1))).unwrap(), ReportFormat::Json);
    let four = emit_report(&run_replications(&small_config(Some(4))).unwrap(), ReportFormat::Json);
    assert_eq!(one, four);
}

#[test]
fn markdown_and_csv_carry_the_same_cells() {
    let r = run_replications(&small_config(None)).unwrap();
    assert_eq!(r.rows.len(), 5);
    let csv = emit_report(&r, ReportFormat::Csv);
    let md = emit_report(&r, ReportFormat::Markdown);
    let csv_cells: Vec<Vec<String>> = csv.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    let md_cells: Vec<Vec<String>> = md
        .lines()
        .filter(|l| !l.starts_with("|---"))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect();
    assert_eq!(csv_cells, md_cells);
    assert_eq!(csv_cells.len(), 6);
    assert!(csv_cells.iter().all(|r| r.len() == 9));
}

#[test]
fn empty_estimator_set_gives_header_only() {
    let mut cfg = small_config(None);
    cfg.estimators.clear();
    let r = run_replications(&cfg).unwrap();
    assert_eq!(emit_report(&r, ReportFormat::Csv).lines().count(), 1);
}

fn ols_estimate(ds: &TrialDataset, kind: EstimatorKind) -> TreatmentEffectEstimate {
    estimators::estimate(ds, kind, &Default::default()).unwrap()
}

#[test]
fn common_correction_is_n_over_n_minus_s_minus_one() {
    // n = 200 with ten covariates: 200/189.
    let ds = observed(ModelId::Model2, 10, 200, 9);
    let est = ols_estimate(&ds, EstimatorKind::OlsCommon);
    let ve = variance_components(&est, 0.5).unwrap();
    let adj = df_adjust(&ve, &est).unwrap();
    let ratio = adj.varsigma_r_adjusted.unwrap() / ve.varsigma_r;
    assert!((ratio - 200.0 / 189.0).abs() < 1e-12, "{ratio}");
    assert!(adj.se_tau >= ve.se_tau);
}

#[test]
fn adjusted_variance_never_shrinks() {
    for seed in 0..10 {
        let ds = observed(ModelId::Model2, 6, 400, 100 + seed);
        for kind in [EstimatorKind::OlsCommon, EstimatorKind::OlsSpecific, EstimatorKind::LassoCommon] {
            let est = ols_estimate(&ds, kind);
            let ve = variance_components(&est, 0.5).unwrap();
            if let Ok(adj) = df_adjust(&ve, &est) {
                assert!(adj.total >= ve.total - 1e-12, "{kind:?} seed {seed}");
            }
        }
    }
}

#[test]
fn asymptotic_reduction_is_never_positive() {
    let mut rng = stream(4, 0, Purpose::Other);
    for _ in 0..200 {
        let p = rng.random_range(1..6);
        let a: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // AᵀA is positive semidefinite.
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| (0..p).map(|r| a[r][i] * a[r][j]).sum()).collect())
            .collect();
        let sigma = Matrix::from_rows(&rows).unwrap();
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let pi = rng.random_range(0.1..0.9);
        assert!(asymptotic_delta_common(&sigma, &beta, pi).unwrap() <= 1e-12);
    }
}
