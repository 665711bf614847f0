use super::*;
use crate::geom::IncrementSeq;
use crate::model::{ModelConfig, PolicySnapshot, SceneCache};
use crate::world::{generate_scenario, Difficulty};

fn tiny_cfg() -> ModelConfig {
    ModelConfig::tiny()
}

fn tiny(seed: u64) -> (PolicySnapshot, SceneCache) {
    let pol = PolicySnapshot::new(tiny_cfg(), seed).unwrap();
    let s = generate_scenario(seed, Difficulty::Medium).unwrap();
    let cache = pol.encode(&s).unwrap();
    (pol, cache)
}

/// Randomizes the zero-initialized refinement heads so refinement moves.
fn wake_refinement(pol: &mut PolicySnapshot, seed: u64) {
    let mut rng = crate::rng::stream(seed, "wake");
    let lay = pol.layout.planner.clone();
    for net in lay.offsets.iter().chain(lay.delta.iter()) {
        net.init_glorot(&mut pol.params, &mut rng);
    }
    lay.variance.init_glorot(&mut pol.params, &mut rng);
}

#[test]
fn uniform_grid_attends_to_the_common_value() {
    let (pol, cache) = tiny(1);
    let lay = &pol.layout.planner;
    let w = &cache.now;
    let v = [0.3, -0.7, 1.1];
    let data: Vec<f64> = (0..w.spec.cells()).flat_map(|_| v).collect();
    let uniform = Arc::new(LatentGrid::new(w.spec, 3, data).unwrap());
    let ctx = PlanContext::new(uniform, Command::Left, cache.ctx.ego, lay.cfg.pos_dim);
    let out = query_interact(lay, &pol.params, &ctx).unwrap();
    let d = lay.cfg.d_model;
    let proj = lay.value.eval(&pol.params, &v);
    for s in 0..3 {
        let mut q_in = pol.params[lay.queries + s * d..lay.queries + (s + 1) * d].to_vec();
        q_in.extend_from_slice(&Command::Left.one_hot());
        let q = lay.q_in.eval(&pol.params, &q_in);
        for k in 0..d {
            assert!((out.stage1[s][k] - (q[k] + proj[k])).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_weights_are_a_distribution() {
    let (pol, cache) = tiny(2);
    let out = query_interact(&pol.layout.planner, &pol.params, &cache.ctx).unwrap();
    for a in &out.attention {
        assert_eq!(a.len(), cache.now.spec.cells());
        assert!(a.iter().all(|&x| x >= 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn permuting_cells_with_their_encodings_leaves_queries_unchanged() {
    let (pol, cache) = tiny(3);
    let lay = &pol.layout.planner;
    let w = &cache.now;
    let cells = w.spec.cells();
    let (c, kd) = (w.channels, w.channels + lay.cfg.pos_dim);
    // reverse-and-rotate permutation
    let perm: Vec<usize> = (0..cells).map(|k| (cells - 1 - k + 7) % cells).collect();
    let mut data = vec![0.0; cells * c];
    let mut keys = vec![0.0; cells * kd];
    for (dst, &src) in perm.iter().enumerate() {
        data[dst * c..(dst + 1) * c].copy_from_slice(&w.data[src * c..(src + 1) * c]);
        keys[dst * kd..(dst + 1) * kd].copy_from_slice(&cache.ctx.keys()[src * kd..(src + 1) * kd]);
    }
    let twin = PlanContext {
        latent: Arc::new(LatentGrid::new(w.spec, c, data).unwrap()),
        keys: Arc::new(keys),
        ..cache.ctx.clone()
    };
    let a = query_interact(lay, &pol.params, &cache.ctx).unwrap();
    let b = query_interact(lay, &pol.params, &twin).unwrap();
    for s in 0..3 {
        for (x, y) in a.queries[s].iter().zip(&b.queries[s]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_heads_decode_to_origin() {
    let (mut pol, _) = tiny(4);
    let lay = pol.layout.planner.clone();
    for net in [&lay.head_target, &lay.head_path, &lay.head_traj] {
        net.zero(&mut pol.params);
    }
    let q = vec![0.4; lay.cfg.d_model];
    let t = decode_target(&lay, &pol.params, &q);
    assert_eq!(t.mu, Point2::ORIGIN);
    let expected = std::f64::consts::LN_2 + 1e-3;
    assert!((t.b[0] - expected).abs() < 1e-15 && (t.b[1] - expected).abs() < 1e-15);
    assert!((t.b[0] - 0.6941).abs() < 1e-4);
    let p = decode_path(&lay, &pol.params, &q);
    assert_eq!(p.points, vec![Point2::ORIGIN; lay.cfg.path_points]);
    let inc = decode_traj(&lay, &pol.params, &q).unwrap();
    assert_eq!(inc.len(), lay.cfg.horizon);
    assert!(inc.deltas.iter().all(|d| *d == Point2::ORIGIN));
    let traj = crate::geom::integrate_increments(&inc, Point2::ORIGIN).unwrap();
    assert!(traj.points.iter().all(|p| *p == Point2::ORIGIN));
}

#[test]
fn scales_stay_positive_for_extreme_logits() {
    let (mut pol, cache) = tiny(5);
    let lay = pol.layout.planner.clone();
    lay.head_target.last_bias_mut(&mut pol.params)[2..].fill(-800.0);
    let out = plan(&lay, &pol.params, &cache.ctx).unwrap();
    for it in &out.history {
        assert!(it.target.b.iter().all(|&b| b >= B_FLOOR));
    }
}

#[test]
fn fresh_refinement_is_the_identity() {
    let (pol, cache) = tiny(6);
    let lay = &pol.layout.planner;
    let out = plan_with_iters(lay, &pol.params, &cache.ctx, 4).unwrap();
    assert_eq!(out.history.len(), 5);
    for it in &out.history[1..] {
        assert_eq!(it, &out.history[0]);
    }
}

#[test]
fn zero_iterations_return_the_input_plan() {
    let (mut pol, cache) = tiny(7);
    wake_refinement(&mut pol, 7);
    let lay = &pol.layout.planner;
    let q = query_interact(lay, &pol.params, &cache.ctx).unwrap();
    let base = plan_with_iters(lay, &pol.params, &cache.ctx, 0).unwrap();
    let again = refine(lay, &pol.params, &cache.ctx, &q.queries, &base.history[0], 0).unwrap();
    assert_eq!(again.history.len(), 1);
    assert_eq!(again.increments, base.increments);
    assert_eq!(again.path, base.path);
    assert!((again.target.mu.x - base.target.mu.x).abs() < 1e-12);
}

#[test]
fn unit_delta_moves_one_point_by_alpha() {
    let (mut pol, cache) = tiny(8);
    let lay = pol.layout.planner.clone();
    let j = 2;
    let bias = lay.delta[2].last_bias_mut(&mut pol.params);
    bias[2 * j] = 1.0 / lay.cfg.delta_scale;
    let q = query_interact(&lay, &pol.params, &cache.ctx).unwrap();
    let base = plan_with_iters(&lay, &pol.params, &cache.ctx, 0).unwrap();
    let out = refine(&lay, &pol.params, &cache.ctx, &q.queries, &base.history[0], 1).unwrap();
    let before = base.trajectory();
    let after = out.trajectory();
    for k in 0..j {
        assert_eq!(after.points[k], before.points[k]);
    }
    let moved = after.points[j] - before.points[j];
    assert!((moved.x - 0.1).abs() < 1e-12 && moved.y.abs() < 1e-12, "{moved:?}");
}

#[test]
fn planning_is_deterministic_and_anytime_consistent() {
    let (mut pol, cache) = tiny(9);
    wake_refinement(&mut pol, 9);
    let lay = &pol.layout.planner;
    let full = plan_with_iters(lay, &pol.params, &cache.ctx, 3).unwrap();
    assert_eq!(full, plan_with_iters(lay, &pol.params, &cache.ctx, 3).unwrap());
    assert_eq!(full.history.len(), 4);
    assert_ne!(full.history[3], full.history[0]);
    for k in 0..3 {
        let short = plan_with_iters(lay, &pol.params, &cache.ctx, k).unwrap();
        assert_eq!(short.history[..], full.history[..=k]);
    }
    assert_eq!(full.history[3].increments, full.increments);
}

#[test]
fn exiting_the_grid_still_plans() {
    let (mut pol, cache) = tiny(10);
    wake_refinement(&mut pol, 10);
    let lay = pol.layout.planner.clone();
    lay.head_traj.last_bias_mut(&mut pol.params).fill(50.0);
    let out = plan(&lay, &pol.params, &cache.ctx).unwrap();
    assert!(out.trajectory().points.iter().all(|p| p.is_finite()));
    assert!(out.trajectory().points.last().unwrap().x > 200.0);
}

#[test]
fn gradients_reach_every_group() {
    let (mut pol, cache) = tiny(11);
    wake_refinement(&mut pol, 11);
    let lay = pol.layout.planner.clone();
    // the variance head reads a detached feature, so it gets its own loss
    let loss_of = |params: &[f64], sigma_only: bool, grads: Option<&mut Vec<f64>>| {
        let mut g = Graph::new();
        let pg = build_plan(&mut g, &lay, params, &cache.ctx, 2).unwrap();
        let st = pg.last();
        let b = st.scale(&mut g, false);
        let pos = st.points(&mut g);
        let all = if sigma_only { pg.sigma } else { g.concat(&[st.target, b, st.path, pos]) };
        let sq = g.square(all);
        let loss = g.sum(sq);
        if let Some(gr) = grads {
            g.backward(loss, &[1.0], gr);
        }
        g.scalar(loss)
    };
    for (name, range) in lay.groups() {
        let sigma_only = name == "variance";
        let mut grads = vec![0.0; pol.params.len()];
        loss_of(&pol.params, sigma_only, Some(&mut grads));
        let (mut num, mut den) = (0.0f64, 0.0f64);
        let step = (range.len() / 25).max(1);
        for k in range.clone().step_by(step) {
            let mut a = pol.params.clone();
            let mut b = pol.params.clone();
            a[k] += 1e-5;
            b[k] -= 1e-5;
            let fd = (loss_of(&a, sigma_only, None) - loss_of(&b, sigma_only, None)) / 2e-5;
            num += (fd - grads[k]).powi(2);
            den += fd * fd;
        }
        assert!(den > 0.0, "{name} receives no gradient");
        assert!(num.sqrt() / den.sqrt() < 1e-4, "{name}: rel {}", num.sqrt() / den.sqrt());
    }
}

#[test]
fn refine_rejects_mismatched_plans() {
    let (pol, cache) = tiny(12);
    let lay = &pol.layout.planner;
    let q = query_interact(lay, &pol.params, &cache.ctx).unwrap();
    let mut it = plan(lay, &pol.params, &cache.ctx).unwrap().history[0].clone();
    it.increments = IncrementSeq::new(vec![Point2::ORIGIN; 2], 0.5).unwrap();
    assert!(matches!(refine(lay, &pol.params, &cache.ctx, &q.queries, &it, 1), Err(Error::Shape(_))));
}
