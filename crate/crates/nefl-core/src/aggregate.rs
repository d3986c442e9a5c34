//! Server-side aggregation of client uploads.
//!
//! Shared ("consistent") tensors are averaged *ring-wise*: because widths
//! are nested, the submodels that contain a tensor cover nested sub-boxes
//! of it. Walking those boxes ascending, each difference ring is averaged
//! over the uploads of every submodel wide enough to cover it, so the inner
//! region — which everyone trains — blends all uploads, while outer rings
//! fall back to the few submodels that reach them. Coordinates no upload
//! covers keep their current global value.
//!
//! Per-submodel ("inconsistent") tensors — step sizes and, by default,
//! batch-norm state — are plainly averaged within each submodel's own
//! group; a submodel nobody trained this round keeps its stored set.
//!
//! Every average is clamped to the [min, max] of its contributors. The
//! true mean always lies inside that interval; the clamp only strips
//! float-rounding spill, which buys two exact invariants: aggregating
//! identical uploads reproduces them bit-for-bit, and results never leave
//! the contributors' convex hull.
//!
//! [`oracle_average`] recomputes the consistent result the slow way — per
//! scalar coordinate, averaging every upload whose [`CoordinateMap`] covers
//! it — with no ring structure at all, as an independent cross-check.

use crate::error::{NeflError, Result};
use crate::model::{is_inconsistent, templates, ParameterStore, SubmodelWeights};
use crate::scaling::{coordinate_map, SubmodelSpec};
use crate::tensor::{flat_index, for_each_index, Tensor};
use indexmap::IndexMap;

/// One client's trained weights for one submodel.
#[derive(Clone, Debug)]
pub struct Upload {
    pub client_id: u32,
    /// 0-based index into the submodel family.
    pub submodel: usize,
    pub weights: SubmodelWeights,
}

/// Buckets uploads by submodel, each bucket sorted by client id so that
/// summation order never depends on arrival order.
pub fn group_by_submodel(uploads: &[Upload], n_submodels: usize) -> Result<Vec<Vec<&Upload>>> {
    let mut groups: Vec<Vec<&Upload>> = vec![Vec::new(); n_submodels];
    let mut seen = std::collections::BTreeSet::new();
    for up in uploads {
        if up.submodel >= n_submodels {
            return Err(NeflError::Contract(format!(
                "upload from client {} names submodel {} of {}",
                up.client_id, up.submodel, n_submodels
            )));
        }
        if !seen.insert(up.client_id) {
            return Err(NeflError::Contract(format!(
                "client {} uploaded more than once",
                up.client_id
            )));
        }
        groups[up.submodel].push(up);
    }
    for group in &mut groups {
        group.sort_by_key(|u| u.client_id);
    }
    Ok(groups)
}

fn contains(extents: &[usize], idx: &[usize]) -> bool {
    idx.len() == extents.len() && idx.iter().zip(extents).all(|(i, e)| i < e)
}

fn clamped_mean(sum: f64, n: u32, lo: f64, hi: f64) -> f64 {
    (sum / f64::from(n)).clamp(lo, hi)
}

/// Nested averaging of every shared tensor. Returns the new tensors plus,
/// per tensor, the per-coordinate contributor counts (0 where the global
/// value was kept).
pub fn nefedavg_consistent(
    store: &ParameterStore,
    specs: &[SubmodelSpec],
    groups: &[Vec<&Upload>],
) -> Result<(IndexMap<String, Tensor>, IndexMap<String, Vec<u32>>)> {
    if groups.len() != specs.len() {
        return Err(NeflError::Contract(format!(
            "{} upload groups for {} submodels",
            groups.len(),
            specs.len()
        )));
    }
    let mut out_tensors = IndexMap::new();
    let mut out_counts = IndexMap::new();

    for tpl in templates(&store.config) {
        if is_inconsistent(&tpl, store.bn_consistent) {
            continue;
        }
        let full = store
            .consistent
            .get(&tpl.name)
            .ok_or_else(|| NeflError::Contract(format!("store is missing '{}'", tpl.name)))?;
        let full_shape = full.shape().to_vec();

        // Submodels that contain this tensor, ascending; width nesting makes
        // their covered boxes nested in the same order.
        let mut contributors: Vec<(Vec<usize>, Vec<&Tensor>)> = Vec::new();
        for (k, spec) in specs.iter().enumerate() {
            if !tpl.in_submodel(spec) {
                continue;
            }
            let extents = tpl.sliced_shape(spec);
            let mut tensors = Vec::with_capacity(groups[k].len());
            for up in &groups[k] {
                let t = up.weights.consistent.get(&tpl.name).ok_or_else(|| {
                    NeflError::Contract(format!(
                        "client {} upload is missing '{}'",
                        up.client_id, tpl.name
                    ))
                })?;
                if t.shape() != extents.as_slice() {
                    return Err(NeflError::Contract(format!(
                        "client {} uploaded '{}' as {:?}, submodel {} slices it to {:?}",
                        up.client_id,
                        tpl.name,
                        t.shape(),
                        up.submodel + 1,
                        extents
                    )));
                }
                tensors.push(t);
            }
            contributors.push((extents, tensors));
        }

        let mut merged = full.clone();
        let mut counts = vec![0u32; merged.len()];
        for r in 0..contributors.len() {
            let inner = if r == 0 { None } else { Some(contributors[r - 1].0.as_slice()) };
            let ring_extents = contributors[r].0.clone();
            for_each_index(&ring_extents, |_, idx| {
                if inner.is_some_and(|p| contains(p, idx)) {
                    return; // already handled by an inner ring
                }
                let mut sum = 0.0;
                let mut n = 0u32;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (extents, tensors) in &contributors[r..] {
                    let at = flat_index(extents, idx);
                    for t in tensors {
                        let v = t.data()[at];
                        sum += v;
                        n += 1;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if n > 0 {
                    let flat = flat_index(&full_shape, idx);
                    merged.data_mut()[flat] = clamped_mean(sum, n, lo, hi);
                    counts[flat] = n;
                }
            });
        }
        out_tensors.insert(tpl.name.clone(), merged);
        out_counts.insert(tpl.name.clone(), counts);
    }
    Ok((out_tensors, out_counts))
}

/// Plain within-group averaging of each submodel's own tensors. Groups with
/// no uploads keep the stored set unchanged.
pub fn fedavg_inconsistent(
    store: &ParameterStore,
    specs: &[SubmodelSpec],
    groups: &[Vec<&Upload>],
) -> Result<Vec<IndexMap<String, Tensor>>> {
    if groups.len() != specs.len() || store.inconsistent.len() != specs.len() {
        return Err(NeflError::Contract("upload groups must match the submodel family".into()));
    }
    let mut out = Vec::with_capacity(specs.len());
    for (k, current) in store.inconsistent.iter().enumerate() {
        if groups[k].is_empty() {
            out.push(current.clone());
            continue;
        }
        let mut merged = IndexMap::new();
        for (name, stored) in current {
            let mut acc = Tensor::zeros(stored.shape());
            let mut lo = vec![f64::INFINITY; stored.len()];
            let mut hi = vec![f64::NEG_INFINITY; stored.len()];
            for up in &groups[k] {
                let t = up.weights.inconsistent.get(name).ok_or_else(|| {
                    NeflError::Contract(format!(
                        "client {} upload is missing '{}'",
                        up.client_id, name
                    ))
                })?;
                if t.shape() != stored.shape() {
                    return Err(NeflError::Contract(format!(
                        "client {} uploaded '{}' as {:?}, expected {:?}",
                        up.client_id,
                        name,
                        t.shape(),
                        stored.shape()
                    )));
                }
                for (i, v) in t.data().iter().enumerate() {
                    acc.data_mut()[i] += v;
                    lo[i] = lo[i].min(*v);
                    hi[i] = hi[i].max(*v);
                }
            }
            let n = groups[k].len() as u32;
            for (i, v) in acc.data_mut().iter_mut().enumerate() {
                *v = clamped_mean(*v, n, lo[i], hi[i]);
            }
            merged.insert(name.clone(), acc);
        }
        out.push(merged);
    }
    Ok(out)
}

/// Independent reference for the consistent half: for every scalar
/// coordinate, average the uploads whose coordinate map covers it (walking
/// submodels ascending, clients ascending), clamped the same way. No rings,
/// no suffix structure.
pub fn oracle_average(
    store: &ParameterStore,
    specs: &[SubmodelSpec],
    groups: &[Vec<&Upload>],
) -> Result<IndexMap<String, Tensor>> {
    let cmaps: Vec<_> =
        specs.iter().map(|s| coordinate_map(&store.config, s, store.bn_consistent)).collect();
    let mut out = IndexMap::new();
    for (name, full) in &store.consistent {
        let mut merged = full.clone();
        let full_shape = full.shape().to_vec();
        for_each_index(&full_shape, |flat, idx| {
            let mut sum = 0.0;
            let mut n = 0u32;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (k, group) in groups.iter().enumerate() {
                if !cmaps[k].covers(name, idx) {
                    continue;
                }
                let extents = cmaps[k].kept_extents(name).expect("covered implies kept");
                for up in group {
                    let v = up.weights.consistent[name].data()[flat_index(extents, idx)];
                    sum += v;
                    n += 1;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if n > 0 {
                merged.data_mut()[flat] = clamped_mean(sum, n, lo, hi);
            }
        });
        out.insert(name.clone(), merged);
    }
    Ok(out)
}

/// One full server step: group, average both halves, and write the result
/// into the store. Returns per-tensor contributor counts for reporting.
pub fn aggregate_round(
    store: &mut ParameterStore,
    specs: &[SubmodelSpec],
    uploads: &[Upload],
) -> Result<IndexMap<String, Vec<u32>>> {
    let groups = group_by_submodel(uploads, specs.len())?;
    let (consistent, contributions) = nefedavg_consistent(store, specs, &groups)?;
    let inconsistent = fedavg_inconsistent(store, specs, &groups)?;
    store.consistent = consistent;
    store.inconsistent = inconsistent;
    Ok(contributions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BlockKind, ModelConfig, StageConfig};
    use crate::rng::{self, Purpose};
    use crate::scaling::{derive_specs, extract_submodel, full_spec, Policy};
    use proptest::prelude::*;
    use rand::Rng;

    fn mlp_cfg(stages: &[(usize, usize)], d: usize, k: usize) -> ModelConfig {
        ModelConfig {
            kind: BlockKind::Mlp,
            stages: stages.iter().map(|&(blocks, width)| StageConfig { blocks, width }).collect(),
            input_shape: vec![d],
            num_classes: k,
        }
    }

    /// Five submodels of one 2-block stage at widths 2,4,6,8,10; the second
    /// block only exists in submodels 1, 3 and 5.
    fn worked_example() -> (ModelConfig, Vec<SubmodelSpec>) {
        let cfg = mlp_cfg(&[(2, 10)], 4, 3);
        let specs: Vec<SubmodelSpec> = (0..5)
            .map(|i| {
                let mut spec = full_spec(&cfg, i);
                spec.gamma_w = 0.2 * (i + 1) as f64;
                spec.stage_widths = vec![2 * (i + 1)];
                if i % 2 == 1 {
                    spec.mask[1] = false;
                    spec.init_step[1] = 0.0;
                }
                spec
            })
            .collect();
        (cfg, specs)
    }

    fn constant_upload(
        store: &ParameterStore,
        specs: &[SubmodelSpec],
        client_id: u32,
        k: usize,
        value: f64,
    ) -> Upload {
        let mut w = extract_submodel(store, &specs[k]).unwrap();
        for t in w.consistent.values_mut().chain(w.inconsistent.values_mut()) {
            for v in t.data_mut() {
                *v = value;
            }
        }
        Upload { client_id, submodel: k, weights: w }
    }

    fn randomized_upload(
        store: &ParameterStore,
        specs: &[SubmodelSpec],
        client_id: u32,
        k: usize,
        seed: u64,
    ) -> Upload {
        let mut r = rng::stream(seed, Purpose::LocalTrain, u64::from(client_id), k as u64);
        let mut w = extract_submodel(store, &specs[k]).unwrap();
        for t in w.consistent.values_mut().chain(w.inconsistent.values_mut()) {
            for v in t.data_mut() {
                *v = r.gen_range(-100.0..100.0);
            }
        }
        Upload { client_id, submodel: k, weights: w }
    }

    #[test]
    fn ring_counts_follow_the_nested_boxes() {
        let (cfg, specs) = worked_example();
        let store = build_model(&cfg, &specs, false, 3).unwrap();
        // groups of sizes 2, 0, 3, 0, 2 — all-submodel coverage 7, then 5, then 2
        let uploads: Vec<Upload> = [(0u32, 0usize), (1, 0), (10, 2), (11, 2), (12, 2), (20, 4), (21, 4)]
            .iter()
            .map(|&(c, k)| constant_upload(&store, &specs, c, k, f64::from(c) + 1.0))
            .collect();
        let groups = group_by_submodel(&uploads, specs.len()).unwrap();
        let (merged, counts) = nefedavg_consistent(&store, &specs, &groups).unwrap();

        // block1 exists only in submodels 1/3/5 (boxes 2, 6, 10 wide).
        let c = &counts["block1.affine1.w"];
        let t = &merged["block1.affine1.w"];
        let mean = |ids: &[u32]| {
            ids.iter().map(|&i| f64::from(i) + 1.0).sum::<f64>() / ids.len() as f64
        };
        for_each_index(&[10, 10], |flat, idx| {
            let (want_n, want_v) = if idx[0] < 2 && idx[1] < 2 {
                (7, mean(&[0, 1, 10, 11, 12, 20, 21]))
            } else if idx[0] < 6 && idx[1] < 6 {
                (5, mean(&[10, 11, 12, 20, 21]))
            } else {
                (2, mean(&[20, 21]))
            };
            assert_eq!(c[flat], want_n, "count at {:?}", idx);
            assert!((t.data()[flat] - want_v).abs() < 1e-12, "value at {:?}", idx);
        });

        // block0 exists everywhere: boxes 2,4,6,8,10 with group sizes 2,0,3,0,2.
        let c0 = &counts["block0.affine1.w"];
        for_each_index(&[10, 10], |flat, idx| {
            let m = idx[0].max(idx[1]);
            let want = match m {
                0 | 1 => 7,
                2..=5 => 5, // submodels 2.. still include groups 3,4,5 = 3+0+2
                _ => 2,
            };
            assert_eq!(c0[flat], want, "count at {:?}", idx);
        });
    }

    #[test]
    fn aggregating_identical_uploads_is_bitwise_idempotent() {
        let cfg = mlp_cfg(&[(1, 8), (2, 12)], 5, 4);
        let specs = derive_specs(&cfg, Policy::WD, &[0.3, 0.6, 1.0], None).unwrap();
        let mut store = build_model(&cfg, &specs, false, 7).unwrap();
        // perturb the store so values aren't symmetric round numbers
        let mut r = rng::stream(1, Purpose::DataGen, 0, 0);
        for t in store.consistent.values_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.37..0.41);
            }
        }

        // odd and even contributor counts both exercise the clamp
        let uploads: Vec<Upload> = [(1u32, 0usize), (2, 0), (3, 0), (4, 1), (5, 2), (6, 2)]
            .iter()
            .map(|&(c, k)| Upload {
                client_id: c,
                submodel: k,
                weights: extract_submodel(&store, &specs[k]).unwrap(),
            })
            .collect();
        let before = store.clone();
        aggregate_round(&mut store, &specs, &uploads).unwrap();
        for (name, t) in &store.consistent {
            assert_eq!(t.data(), before.consistent[name].data(), "{} drifted", name);
        }
        for (k, set) in store.inconsistent.iter().enumerate() {
            for (name, t) in set {
                assert_eq!(t.data(), before.inconsistent[k][name].data(), "{} [{}]", name, k);
            }
        }
    }

    #[test]
    fn untouched_regions_and_idle_submodels_keep_their_values() {
        let cfg = mlp_cfg(&[(2, 10)], 4, 3);
        let specs = derive_specs(&cfg, Policy::W, &[0.3, 1.0], None).unwrap();
        let mut store = build_model(&cfg, &specs, false, 11).unwrap();
        let before = store.clone();
        let narrow = specs[0].stage_widths[0];
        assert!(narrow < 10);

        let uploads = vec![randomized_upload(&store, &specs, 9, 0, 5)];
        let counts = aggregate_round(&mut store, &specs, &uploads).unwrap();
        let name = "block0.affine2.w";
        let t = &store.consistent[name];
        let old = &before.consistent[name];
        let up = &uploads[0].weights.consistent[name];
        for_each_index(&[10, 10], |flat, idx| {
            if idx[0] < narrow && idx[1] < narrow {
                let got = up.data()[flat_index(&[narrow, narrow], idx)];
                assert_eq!(t.data()[flat], got, "covered {:?} takes the upload", idx);
                assert_eq!(counts[name][flat], 1);
            } else {
                assert_eq!(t.data()[flat], old.data()[flat], "uncovered {:?} stays", idx);
                assert_eq!(counts[name][flat], 0);
            }
        });
        // the idle submodel's inconsistent set is untouched
        for (n, t) in &store.inconsistent[1] {
            assert_eq!(t.data(), before.inconsistent[1][n].data(), "{}", n);
        }
    }

    #[test]
    fn inconsistent_average_is_a_plain_group_mean() {
        let cfg = mlp_cfg(&[(1, 8)], 4, 3);
        let specs = derive_specs(&cfg, Policy::W, &[0.5, 1.0], None).unwrap();
        let mut store = build_model(&cfg, &specs, false, 13).unwrap();
        let mut a = Upload {
            client_id: 1,
            submodel: 0,
            weights: extract_submodel(&store, &specs[0]).unwrap(),
        };
        let mut b = a.clone();
        b.client_id = 2;
        a.weights.inconsistent["block0.step"] = Tensor::scalar(2.0);
        b.weights.inconsistent["block0.step"] = Tensor::scalar(4.0);
        a.weights.inconsistent["stem.bn.running_mean"].data_mut()[0] = 1.0;
        b.weights.inconsistent["stem.bn.running_mean"].data_mut()[0] = 3.0;

        aggregate_round(&mut store, &specs, &[a, b]).unwrap();
        assert_eq!(store.inconsistent[0]["block0.step"].item().unwrap(), 3.0);
        assert_eq!(store.inconsistent[0]["stem.bn.running_mean"].data()[0], 2.0);
    }

    #[test]
    fn ring_walk_matches_the_coordinate_oracle() {
        let cfg = ModelConfig {
            kind: BlockKind::Conv,
            stages: vec![StageConfig { blocks: 2, width: 6 }, StageConfig { blocks: 2, width: 8 }],
            input_shape: vec![1, 8, 8],
            num_classes: 4,
        };
        for seed in 0..5u64 {
            let specs = derive_specs(&cfg, Policy::WD, &[0.25, 0.5, 1.0], None).unwrap();
            let store = build_model(&cfg, &specs, false, seed).unwrap();
            let mut r = rng::stream(seed, Purpose::ClientSample, 0, 0);
            let uploads: Vec<Upload> = (0..r.gen_range(1..7u32))
                .map(|c| {
                    let k = r.gen_range(0..specs.len());
                    randomized_upload(&store, &specs, c, k, seed * 1000 + 7)
                })
                .collect();
            let groups = group_by_submodel(&uploads, specs.len()).unwrap();
            let (merged, _) = nefedavg_consistent(&store, &specs, &groups).unwrap();
            let oracle = oracle_average(&store, &specs, &groups).unwrap();
            for (name, t) in &merged {
                let o = &oracle[name];
                for (a, b) in t.data().iter().zip(o.data()) {
                    assert!((a - b).abs() <= 1e-12, "{}: {} vs {}", name, a, b);
                }
            }
        }
    }

    #[test]
    fn contract_violations_are_rejected() {
        let cfg = mlp_cfg(&[(1, 8)], 4, 3);
        let specs = derive_specs(&cfg, Policy::W, &[0.5, 1.0], None).unwrap();
        let store = build_model(&cfg, &specs, false, 17).unwrap();
        let up = |c, k| Upload {
            client_id: c,
            submodel: k,
            weights: extract_submodel(&store, &specs[k]).unwrap(),
        };
        assert!(group_by_submodel(&[up(1, 0), up(1, 1)], 2).is_err(), "duplicate client");
        let mut stray = up(1, 0);
        stray.submodel = 2;
        assert!(group_by_submodel(&[stray], 2).is_err(), "unknown submodel");

        // a wrong-shape tensor inside an upload
        let mut bad = up(3, 0);
        bad.weights.consistent["head.w"] = Tensor::zeros(&[2, 2]);
        let uploads = [bad];
        let groups = group_by_submodel(&uploads, 2).unwrap();
        assert!(nefedavg_consistent(&store, &specs, &groups).is_err());
    }

    #[test]
    fn consistent_batchnorm_mode_ring_averages_bn_state() {
        let cfg = mlp_cfg(&[(1, 8)], 4, 3);
        let specs = derive_specs(&cfg, Policy::W, &[0.5, 1.0], None).unwrap();
        let mut store = build_model(&cfg, &specs, false, 19).unwrap();
        assert!(store.bn_consistent == false);
        let mut ablated = build_model(&cfg, &specs, true, 19).unwrap();
        let uploads =
            vec![constant_upload(&ablated, &specs, 1, 0, 5.0), constant_upload(&ablated, &specs, 2, 1, 9.0)];
        let counts = aggregate_round(&mut ablated, &specs, &uploads).unwrap();
        assert!(counts.contains_key("stem.bn.scale"));
        let narrow = specs[0].stage_widths[0];
        let scale = &ablated.consistent["stem.bn.scale"];
        assert_eq!(scale.data()[0], 7.0, "inner ring blends both uploads");
        assert_eq!(scale.data()[narrow], 9.0, "outer ring only sees the wide upload");

        // in the default mode the same names never appear in the consistent half
        let uploads = vec![constant_upload(&store, &specs, 1, 0, 5.0)];
        let counts = aggregate_round(&mut store, &specs, &uploads).unwrap();
        assert!(!counts.contains_key("stem.bn.scale"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn merged_values_stay_in_the_contributors_hull_and_ignore_order(
            assignments in proptest::collection::vec(0usize..3, 1..6),
            seed in 0u64..1000,
            rotate in 0usize..5,
        ) {
            let cfg = mlp_cfg(&[(2, 6)], 4, 3);
            let specs = derive_specs(&cfg, Policy::WD, &[0.3, 0.6, 1.0], None).unwrap();
            let mut store = build_model(&cfg, &specs, false, seed).unwrap();
            let uploads: Vec<Upload> = assignments
                .iter()
                .enumerate()
                .map(|(c, &k)| randomized_upload(&store, &specs, c as u32, k, seed))
                .collect();

            let groups = group_by_submodel(&uploads, specs.len()).unwrap();
            let (merged, counts) = nefedavg_consistent(&store, &specs, &groups).unwrap();
            let cmaps: Vec<_> =
                specs.iter().map(|s| crate::scaling::coordinate_map(&cfg, s, false)).collect();

            for (name, t) in &merged {
                let full_shape = t.shape().to_vec();
                for_each_index(&full_shape, |flat, idx| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    let mut n = 0u32;
                    for up in &uploads {
                        if cmaps[up.submodel].covers(name, idx) {
                            let extents = cmaps[up.submodel].kept_extents(name).unwrap();
                            let v = up.weights.consistent[name].data()[flat_index(extents, idx)];
                            lo = lo.min(v);
                            hi = hi.max(v);
                            n += 1;
                        }
                    }
                    assert_eq!(counts[name][flat], n, "{} {:?}", name, idx);
                    if n == 0 {
                        assert_eq!(
                            t.data()[flat],
                            store.consistent[name].data()[flat],
                            "{} {:?} must keep the global value",
                            name,
                            idx
                        );
                    } else {
                        assert!(
                            t.data()[flat] >= lo && t.data()[flat] <= hi,
                            "{} {:?}: {} outside [{}, {}]",
                            name,
                            idx,
                            t.data()[flat],
                            lo,
                            hi
                        );
                    }
                });
            }

            // permuting arrival order changes nothing, bit for bit
            let mut rotated = uploads.clone();
            let shift = rotate % rotated.len().max(1);
            rotated.rotate_left(shift);
            let mut store_b = store.clone();
            aggregate_round(&mut store, &specs, &uploads).unwrap();
            aggregate_round(&mut store_b, &specs, &rotated).unwrap();
            for (name, t) in &store.consistent {
                prop_assert_eq!(t.data(), store_b.consistent[name].data());
            }
        }
    }
}
