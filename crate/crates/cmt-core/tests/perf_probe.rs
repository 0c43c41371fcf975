//! Ignored-by-default calibration probes. Run explicitly:
//! `cargo test -p cmt-core --test perf_probe -- --ignored --nocapture`

use std::time::Instant;

use cmt_core::env::{generate_dataset, Dataset, Dir, EnvSpec, Tier};
use cmt_core::eval::{
    bc_rollout, episode_prompts, evaluate_fixed_prompts, normalized_score, prompt_separation,
    return_stats, rollout_fixed, train_bc, BcConfig,
};
use cmt_core::losses::disjoint_fragments;
use cmt_core::model::{adaptor_apply, encode, init_bundle, predicted_return, ModelBundle, ModelConfig};
use cmt_core::pipeline::{
    improvement_tune, meta_test, meta_train, pretrain_representation, MetaTestConfig, TrainConfig,
    TuneConfig,
};
use cmt_core::rng::RngStream;
use cmt_core::traj::StepAction;

fn fragment_margin(bundle: &ModelBundle, ds: &Dataset, episodes: usize, frag_len: usize) -> f64 {
    let mut rng = RngStream::new(99, 0);
    let mut groups = Vec::new();
    for ep in ds.episodes.iter().take(episodes) {
        let Some((a, b)) = disjoint_fragments(&ep.traj, frag_len, &mut rng) else {
            continue;
        };
        let za = encode(bundle, None, &a).unwrap();
        let zb = encode(bundle, None, &b).unwrap();
        groups.push(vec![za, zb]);
    }
    let sep = prompt_separation(&groups).unwrap();
    println!("    within {:.4} cross {:.4}", sep.within, sep.cross);
    sep.margin()
}

#[test]
#[ignore]
fn probe_a_pointline_representation() {
    let spec = EnvSpec::pointline(1.0).unwrap();
    let ds = generate_dataset(&spec, Tier::Mixed, 500, 1).unwrap();
    let cfg = ModelConfig::base(spec.state_dim(), spec.action_kind());

    let t0 = Instant::now();
    let mut bundle = init_bundle(&cfg, 0);
    let tc = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let rows = pretrain_representation(&mut bundle, &ds, &tc).unwrap();
    for r in &rows {
        println!(
            "A epoch {:02} l1 {:.4} l2t {:.4} l2r {:.4} ({:.1}s)",
            r.epoch,
            r.l1.unwrap(),
            r.l2_traj.unwrap(),
            r.l2_return.unwrap(),
            r.wall_seconds.unwrap_or(0.0)
        );
    }
    println!("A gamma=0.1 total {:.1}s", t0.elapsed().as_secs_f64());
    println!("A margin(gamma=0.1):");
    let m1 = fragment_margin(&bundle, &ds, 32, 16);
    println!("A margin(gamma=0.1) = {m1:.4}");

    let t1 = Instant::now();
    let mut flat = init_bundle(&cfg, 0);
    let tc0 = TrainConfig {
        epochs: 50,
        gamma: 0.0,
        ..TrainConfig::default()
    };
    let rows0 = pretrain_representation(&mut flat, &ds, &tc0).unwrap();
    println!(
        "A gamma=0 l1 first {:.4} last {:.4} total {:.1}s",
        rows0[0].l1.unwrap(),
        rows0.last().unwrap().l1.unwrap(),
        t1.elapsed().as_secs_f64()
    );
    println!("A margin(gamma=0):");
    let m0 = fragment_margin(&flat, &ds, 32, 16);
    println!("A margin(gamma=0) = {m0:.4}  (margin gap {:.4})", m1 - m0);
}

#[test]
#[ignore]
fn probe_b_chain_improvement() {
    let spec = EnvSpec::chain(0);
    let ds = generate_dataset(&spec, Tier::Mixed, 200, 2).unwrap();
    let cfg = ModelConfig::base(spec.state_dim(), spec.action_kind());
    let mut bundle = init_bundle(&cfg, 0);

    let t0 = Instant::now();
    let rows = pretrain_representation(
        &mut bundle,
        &ds,
        &TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    println!(
        "B pretrain l1 {:.3} -> {:.3} in {:.1}s",
        rows[0].l1.unwrap(),
        rows.last().unwrap().l1.unwrap(),
        t0.elapsed().as_secs_f64()
    );

    let t1 = Instant::now();
    let tune_rows = improvement_tune(&mut bundle, &ds, &TuneConfig::default()).unwrap();
    println!(
        "B tune loss {:.3} -> {:.3} in {:.1}s",
        tune_rows[0].adaptor_loss.unwrap(),
        tune_rows.last().unwrap().adaptor_loss.unwrap(),
        t1.elapsed().as_secs_f64()
    );

    let t2 = Instant::now();
    let (rr, er) = (ds.manifest.random_ref, ds.manifest.expert_ref);
    let mut diffs = Vec::new();
    let mut pr_raw_sum = 0.0;
    let mut pr_tuned_sum = 0.0;
    for seed in 0..5u64 {
        let prompts = episode_prompts(&bundle, &ds, 16, 1000 + seed).unwrap();
        let tuned: Vec<_> = prompts
            .iter()
            .map(|z| adaptor_apply(&bundle, z).unwrap())
            .collect();
        let raw = return_stats(&evaluate_fixed_prompts(&bundle, &spec, &prompts, seed).unwrap());
        let tun = return_stats(&evaluate_fixed_prompts(&bundle, &spec, &tuned, seed).unwrap());
        let s_raw = normalized_score(raw.mean, rr, er).unwrap();
        let s_tun = normalized_score(tun.mean, rr, er).unwrap();
        println!("B seed {seed}: reconstruct {s_raw:.2} tuned {s_tun:.2}");
        diffs.push(s_tun - s_raw);
        for (z, zt) in prompts.iter().zip(&tuned) {
            pr_raw_sum += predicted_return(&bundle, z, &ds.episodes[0].traj).unwrap();
            pr_tuned_sum += predicted_return(&bundle, zt, &ds.episodes[0].traj).unwrap();
        }
    }
    println!(
        "B mean diff {:.3}  predicted return raw {:.3} tuned {:.3}  eval {:.1}s",
        diffs.iter().sum::<f64>() / diffs.len() as f64,
        pr_raw_sum / 80.0,
        pr_tuned_sum / 80.0,
        t2.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn probe_c_gridgoal_meta() {
    let fwd = EnvSpec::gridgoal(Dir::Right);
    let bwd = EnvSpec::gridgoal(Dir::Left);
    let data = vec![
        generate_dataset(&fwd, Tier::Mixed, 128, 3).unwrap(),
        generate_dataset(&bwd, Tier::Mixed, 128, 4).unwrap(),
    ];
    let cfg = ModelConfig::base(fwd.state_dim(), fwd.action_kind());
    let mut bundle = init_bundle(&cfg, 0);

    let t0 = Instant::now();
    let rows = meta_train(
        &mut bundle,
        &data,
        &TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
        &TuneConfig::default(),
    )
    .unwrap();
    for r in rows.iter().step_by(4).chain(rows.last()) {
        println!(
            "C epoch {:02} stage {} l1 {:?} l2task {:?} adaptor {:?} ({:.1}s)",
            r.epoch,
            r.stage,
            r.l1,
            r.l2_task,
            r.adaptor_loss,
            r.wall_seconds.unwrap_or(0.0)
        );
    }
    println!("C meta_train total {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    for (spec, label) in [(fwd, "fwd"), (bwd, "bwd")] {
        let expert = if label == "fwd" { 2 } else { 0 };
        let mut per_episode_returns = vec![Vec::new(); 5];
        let mut by_ep = vec![(0usize, 0usize); 5];
        for seed in 0..20u64 {
            let eps = meta_test(
                &bundle,
                &spec,
                &MetaTestConfig {
                    episodes: 5,
                    seed,
                    ..MetaTestConfig::default()
                },
            )
            .unwrap();
            for (i, ep) in eps.iter().enumerate() {
                per_episode_returns[i].push(ep.traj.ret());
                for t in 0..ep.traj.steps() {
                    by_ep[i].1 += 1;
                    if ep.traj.actions.get(t) == StepAction::Discrete(expert) {
                        by_ep[i].0 += 1;
                    }
                }
            }
        }
        let means: Vec<f64> = per_episode_returns
            .iter()
            .map(|v| return_stats(v).mean)
            .collect();
        let (c2, t2sum) = by_ep[1..]
            .iter()
            .fold((0, 0), |(c, t), &(ci, ti)| (c + ci, t + ti));
        println!(
            "C {label}: direction rate {:.3}  per-ep rates {:?}  ep returns {:?}",
            c2 as f64 / t2sum as f64,
            by_ep
                .iter()
                .map(|&(c, t)| ((c as f64 / t as f64) * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            means.iter().map(|m| (m * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
    println!("C meta_test total {:.1}s", t1.elapsed().as_secs_f64());

    // Task-level prompt margin: whole episodes encoded per task.
    let mut groups = Vec::new();
    for ds in &data {
        let zs = episode_prompts(&bundle, ds, 16, 7).unwrap();
        groups.push(zs);
    }
    let sep = prompt_separation(&groups).unwrap();
    println!(
        "C task margin {:.4} (within {:.4} cross {:.4})",
        sep.margin(),
        sep.within,
        sep.cross
    );
}

#[test]
#[ignore]
fn probe_d_chain_expert_baseline() {
    let spec = EnvSpec::chain(0);
    let ds = generate_dataset(&spec, Tier::Expert, 200, 5).unwrap();
    let (rr, er) = (ds.manifest.random_ref, ds.manifest.expert_ref);

    let t0 = Instant::now();
    let bc = train_bc(&ds, &BcConfig::default()).unwrap();
    let bc_returns: Vec<f64> = (0..20)
        .map(|i| {
            let seed = RngStream::new(777, i).next_u64();
            bc_rollout(&bc, &spec, seed).unwrap().traj.ret()
        })
        .collect();
    let bc_score = normalized_score(return_stats(&bc_returns).mean, rr, er).unwrap();
    println!("D BC score {bc_score:.2} in {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = ModelConfig::base(spec.state_dim(), spec.action_kind());
    let mut bundle = init_bundle(&cfg, 0);
    let t1 = Instant::now();
    let rows = pretrain_representation(
        &mut bundle,
        &ds,
        &TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    println!(
        "D pretrain l1 {:.3} -> {:.3} in {:.1}s",
        rows[0].l1.unwrap(),
        rows.last().unwrap().l1.unwrap(),
        t1.elapsed().as_secs_f64()
    );
    let prompts = episode_prompts(&bundle, &ds, 20, 3).unwrap();
    let mut returns = Vec::new();
    for (i, z) in prompts.iter().enumerate() {
        let seed = RngStream::new(777, i as u64).next_u64();
        returns.push(rollout_fixed(&bundle, &spec, z, seed).unwrap().traj.ret());
    }
    let score = normalized_score(return_stats(&returns).mean, rr, er).unwrap();
    println!("D CMT reconstruct score {score:.2} (gap to BC {:.2})", (score - bc_score).abs());
}
