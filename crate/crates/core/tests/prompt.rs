mod common;

use nalgebra::DMatrix;
use promptgen::autodiff::{finite_diff_check, Graph, ParamId, ParamSet, Tensor};
use promptgen::prompt::{InterpolationLevel, PromptConfig, PromptGenerator, PromptKind};
use promptgen::Result;

use common::{rng, scramble};

fn config(kind: PromptKind, c: usize, s: usize, p: usize, d: usize, f: usize) -> PromptConfig {
    PromptConfig {
        kind,
        seq_len: s,
        conditions: c,
        hidden: p,
        token_dim: d,
        factors: f,
    }
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&v| v > top * 1e-9).count()
}

#[test]
fn count_difference_matches_closed_form_over_grid() {
    for p in [1u64, 3, 16, 768] {
        for c in [1u64, 2, 10, 100] {
            for s in [1u64, 4, 16, 128] {
                for f in [1u64, 2, 16] {
                    let base = config(PromptKind::Baseline, c as usize, s as usize, p as usize, 8, 1).count_params();
                    let fact = config(PromptKind::Factorized, c as usize, s as usize, p as usize, 8, f as usize).count_params();
                    let diff = base as i64 - fact as i64;
                    assert_eq!(diff, p as i64 * (c * s) as i64 - p as i64 * (f * (c + s)) as i64);
                    if (f * (c + s)) < c * s {
                        assert!(diff > 0, "P={p} C={c} S={s} F={f}");
                    }
                }
            }
        }
    }
}

#[test]
fn baseline_table_rank_reaches_min_of_conditions_and_width() {
    for (c, s, p) in [(3, 2, 2), (6, 2, 2), (2, 3, 3)] {
        let mut params = ParamSet::new();
        PromptGenerator::init(config(PromptKind::Baseline, c, s, p, 4, 1), &mut params, &mut rng(c as u64)).unwrap();
        let table = params.value(params.id("prompt.table").unwrap());
        let m = DMatrix::from_row_slice(c, s * p, table.data()).map(f64::from);
        assert_eq!(rank(&m), c.min(s * p));
    }
}

/// Condition-by-position matrix of the factor-reduced sums at hidden unit `u`.
fn factorized_slice(params: &ParamSet, cfg: &PromptConfig, u: usize) -> DMatrix<f64> {
    let (f, pf) = (cfg.factors, cfg.hidden * cfg.factors);
    let class = params.value(params.id("prompt.class").unwrap()).data();
    let pos = params.value(params.id("prompt.position").unwrap()).data();
    let fac = params.value(params.id("prompt.factor").unwrap()).data();
    DMatrix::from_fn(cfg.conditions, cfg.seq_len, |c, s| {
        (0..f)
            .map(|k| fac[k] as f64 * (class[c * pf + u * f + k] as f64 + pos[s * pf + u * f + k] as f64))
            .sum()
    })
}

#[test]
fn factorized_slices_are_additive_in_condition_and_position() {
    for f in [1, 2, 4] {
        let cfg = config(PromptKind::Factorized, 6, 5, 3, 4, f);
        let mut params = ParamSet::new();
        PromptGenerator::init(cfg.clone(), &mut params, &mut rng(f as u64)).unwrap();
        scramble(&mut params, 1.0, &mut rng(100 + f as u64));
        for u in 0..cfg.hidden {
            let m = factorized_slice(&params, &cfg, u);
            // a condition term plus a position term, whatever F is
            assert!(rank(&m) <= 2);
            let (rows, cols) = (m.row_mean(), m.column_mean());
            let interaction = DMatrix::from_fn(6, 5, |c, s| m[(c, s)] - rows[s] - cols[c] + m.mean());
            assert!(interaction.amax() < 1e-9);
        }
    }
}

fn prompt_ids(params: &ParamSet) -> Vec<ParamId> {
    params.ids_with_prefix("prompt.").collect()
}

#[test]
fn generated_prompt_gradients_match_finite_differences() {
    for kind in [PromptKind::Baseline, PromptKind::Factorized] {
        for seed in 0..5 {
            let cfg = config(kind, 3, 2, 4, 5, 2);
            let mut params = ParamSet::new();
            let generator = PromptGenerator::init(cfg, &mut params, &mut rng(seed)).unwrap();
            scramble(&mut params, 0.3, &mut rng(seed + 50));
            let ids = prompt_ids(&params);
            let point: Vec<f32> = ids.iter().flat_map(|&id| params.value(id).data().to_vec()).collect();
            let weights = Tensor::randn(&[2, 2, 5], 1.0, &mut rng(seed + 99));
            let mut p = params.clone();
            let f = |x: &[f32]| -> Result<(f64, Vec<f32>)> {
                let mut off = 0;
                for &id in &ids {
                    let v = p.value_mut(id).data_mut();
                    let n = v.len();
                    v.copy_from_slice(&x[off..off + n]);
                    off += n;
                }
                let mut g = Graph::new();
                let out = generator.forward(&mut g, &p, &[2, 0])?;
                let value = g
                    .value(out)
                    .data()
                    .iter()
                    .zip(weights.data())
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let w = g.constant(weights.clone())?;
                let prod = g.mul(out, w)?;
                let loss = g.sum(prod)?;
                let grads = g.backward(loss)?;
                let flat = ids
                    .iter()
                    .flat_map(|&id| match grads.param(id) {
                        Some(t) => t.data().to_vec(),
                        None => vec![0.0; p.value(id).numel()],
                    })
                    .collect();
                Ok((value, flat))
            };
            let err = finite_diff_check(f, &point, 5e-3).unwrap();
            assert!(err < 1e-4, "{kind:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn marquee_between_equal_conditions_is_constant() {
    let cfg = config(PromptKind::Factorized, 4, 3, 5, 6, 1);
    let mut params = ParamSet::new();
    let generator = PromptGenerator::init(cfg, &mut params, &mut rng(4)).unwrap();
    scramble(&mut params, 0.5, &mut rng(5));
    let pure = generator.generate(&params, 2).unwrap();
    for level in [InterpolationLevel::Representation, InterpolationLevel::Token] {
        for t in 1..10 {
            let m = generator.marquee_prompt(&params, 2, 2, t, 4, level).unwrap();
            assert_eq!(m.data(), pure.data(), "t = {t}");
        }
    }
}

#[test]
fn representation_width_is_hidden_times_factors() {
    for (kind, f, want) in [(PromptKind::Factorized, 1, 7), (PromptKind::Factorized, 3, 21), (PromptKind::Baseline, 1, 14)] {
        let cfg = config(kind, 2, 2, 7, 4, f);
        let mut params = ParamSet::new();
        let generator = PromptGenerator::init(cfg.clone(), &mut params, &mut rng(0)).unwrap();
        assert_eq!(cfg.representation_dim(), want);
        assert_eq!(generator.representation(&params, 1).unwrap().numel(), want);
    }
}

#[test]
fn single_condition_baseline_is_an_unconditional_prompt() {
    let cfg = config(PromptKind::Baseline, 1, 3, 4, 5, 1);
    let mut params = ParamSet::new();
    let generator = PromptGenerator::init(cfg, &mut params, &mut rng(1)).unwrap();
    assert_eq!(generator.generate(&params, 0).unwrap().shape(), &[3, 5]);
    assert!(generator.generate(&params, 1).is_err());
}
