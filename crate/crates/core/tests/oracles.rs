//! Two-time quantities against a Langevin ensemble.

use std::sync::OnceLock;

use qbm::bath::{Family, SpectralModel};
use qbm::cli::check::Tables;
use qbm::grid::TimeGrid;
use qbm::oracle::{run_ensemble, EnsembleStats, InitialState, Potential};
use qbm::propagator::{Mat2, Vec2};

const N: usize = 40_000;

struct Fixture {
    tables: Tables,
    pairs: Vec<(usize, usize)>,
    stats: EnsembleStats,
}

/// Strong coupling, short run; pairs are `(t, τ)` with `τ < t`.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let model = SpectralModel {
            family: Family::OhmicLorentzCutoff,
            gamma0: 2.0,
            cutoff: 10.0,
            temperature: 0.5,
            mass: 1.0,
            omega: 2.0,
        };
        let grid = TimeGrid::new(2.0, 0.005).unwrap();
        let tables = Tables::build(&model, grid).unwrap();
        let pairs = vec![(200, 100), (400, 100), (400, 300), (300, 20)];
        let stats = run_ensemble(
            &tables.kernels,
            &Potential::harmonic(&model),
            &InitialState::point(Vec2::zeros()),
            N,
            3,
            None,
            &pairs,
        )
        .unwrap();
        Fixture { tables, pairs, stats }
    })
}

#[test]
fn two_time_covariance_matches_ensemble() {
    let f = fixture();
    for (k, &(t, tau)) in f.pairs.iter().enumerate() {
        let (mc, se) = (f.stats.pair_cov[k], f.stats.pair_err[k]);
        let exact = f.tables.cov.sigma(t, tau);
        for a in 0..2 {
            for b in 0..2 {
                let z = (mc[(a, b)] - exact[(a, b)]) / se[(a, b)];
                assert!(z.abs() < 4.0, "pair ({t},{tau}) entry ({a},{b}): z = {z:.2}");
            }
        }
    }
}

#[test]
fn s_kernel_matches_ensemble_variance() {
    // s(τ,t) = Var[x(τ) − x̂ᵀΦ(τ,t)ζ(t)] for the noise-driven part ζ
    let f = fixture();
    for (k, &(t, tau)) in f.pairs.iter().enumerate() {
        let rel = f.tables.prop.phi_rel_idx(tau, t).unwrap();
        let (ctt, ctau) = (f.stats.cov[t], f.stats.cov[tau]);
        let cross = f.stats.pair_cov[k];
        let mc = ctau[(0, 0)] + (rel * ctt * rel.transpose())[(0, 0)] - 2.0 * (rel * cross)[(0, 0)];
        let se_bound = f.stats.cov_err[tau][(0, 0)]
            + (rel.abs() * f.stats.cov_err[t] * rel.abs().transpose())[(0, 0)]
            + 2.0 * (rel.abs() * f.stats.pair_err[k])[(0, 0)];
        let s = f.tables.cov.s_idx(&f.tables.prop, tau, t).unwrap();
        assert!((s - mc).abs() < 3.0 * se_bound, "({tau},{t}): s = {s:.6}, ensemble {mc:.6} ± {se_bound:.2e}");
        assert!(s >= -1e-12, "s is a variance: {s}");
    }
}

#[test]
fn equal_time_covariance_is_positive_semidefinite() {
    let cov = &fixture().tables.cov;
    for i in 0..cov.grid.len() {
        let s: Mat2 = cov.equal_time(i);
        let ev = s.symmetric_eigenvalues();
        assert!(ev.min() >= -1e-10 * s.trace().abs().max(1e-300), "t index {i}: {ev}");
    }
}
