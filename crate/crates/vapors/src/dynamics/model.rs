//! Rollout, loss, and analytic gradients of the latent dynamics model.
//!
//! One training sequence of L transitions expands to L+1 frames. Per frame:
//!
//! ```text
//! h_t   = GRU([z_{t-1}, a_{t-1}], h_{t-1})        (zeros at t = 0)
//! prior = PriorHead(h_t)
//! feat  = Encoder(mask_t)
//! post  = PostHead([h_t, feat])
//! z_t   = post.mean + exp(post.logstd) * eps_t    (frozen noise)
//! recon = Decoder([h_t, z_t])                     -> MSE against mask_t
//! r_hat = RewardHead([h_t, z_t])                  -> MSE against r_{t-1}
//! KL(post || prior) summed over latent dimensions
//! ```
//!
//! The reward attached to a latent is the one received upon *arriving* in
//! that state, which is what imagination rollouts sum during planning.

use rayon::prelude::*;

use super::layers::*;
use super::{
    LatentState, LossBreakdown, LossWeights, ModelError, ModelParams, Noise, TrainBatch,
};
use crate::grid::ObsGrid;

fn obs_to_vec(obs: &ObsGrid) -> Vec<f64> {
    obs.data().iter().map(|&v| f64::from(v)).collect()
}

/// Smooth bounding of raw log-stddev into `[lo, hi]`:
/// `lo + softplus(x - lo) - softplus(x - hi)`.
#[inline]
fn bound_logstd(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + softplus(raw - lo) - softplus(raw - hi)
}

#[inline]
fn bound_logstd_deriv(raw: f64, lo: f64, hi: f64) -> f64 {
    sigmoid(raw - lo) - sigmoid(raw - hi)
}

/// Closed-form KL between diagonal Gaussians q and p, summed over
/// dimensions. Inputs are means and (bounded) log-stddevs.
fn kl_sum(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..mq.len() {
        let var_ratio = (2.0 * (lq[i] - lp[i])).exp();
        let mean_term = (mq[i] - mp[i]) * (mq[i] - mp[i]) * (-2.0 * lp[i]).exp();
        total += (lp[i] - lq[i]) + 0.5 * (var_ratio + mean_term) - 0.5;
    }
    total
}

/// Accumulate `scale * dKL/d(mq, lq, mp, lp)`.
fn kl_backward(
    mq: &[f64],
    lq: &[f64],
    mp: &[f64],
    lp: &[f64],
    scale: f64,
    dmq: &mut [f64],
    dlq: &mut [f64],
    dmp: &mut [f64],
    dlp: &mut [f64],
) {
    for i in 0..mq.len() {
        let inv_var_p = (-2.0 * lp[i]).exp();
        let var_ratio = (2.0 * (lq[i] - lp[i])).exp();
        let diff = mq[i] - mp[i];
        dmq[i] += scale * diff * inv_var_p;
        dmp[i] -= scale * diff * inv_var_p;
        dlq[i] += scale * (var_ratio - 1.0);
        dlp[i] += scale * (1.0 - var_ratio - diff * diff * inv_var_p);
    }
}

struct GaussHeadCache {
    input: Vec<f64>,
    hid_pre: Vec<f64>,
    hid: Vec<f64>,
    raw: Vec<f64>,
    mean: Vec<f64>,
    logstd: Vec<f64>,
}

struct EncCache {
    conv1_pre: Vec<f64>,
    conv1_act: Vec<f64>,
    conv2_pre: Vec<f64>,
    conv2_act: Vec<f64>,
    fc_pre: Vec<f64>,
    feat: Vec<f64>,
}

struct DecCache {
    input: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    fc2_pre: Vec<f64>,
    fc2_act: Vec<f64>,
    deconv1_pre: Vec<f64>,
    deconv1_act: Vec<f64>,
    recon: Vec<f64>,
}

struct RewCache {
    input: Vec<f64>,
    hid_pre: Vec<f64>,
    hid: Vec<f64>,
    rhat: f64,
}

struct OverCache {
    gru: GruCache,
    head: GaussHeadCache,
}

struct FrameCache {
    gru: GruCache,
    prior: GaussHeadCache,
    enc: EncCache,
    post: GaussHeadCache,
    eps: Vec<f64>,
    z: Vec<f64>,
    dec: DecCache,
    rew: RewCache,
    over: Option<OverCache>,
}

struct SeqResult {
    frames: Vec<FrameCache>,
    recon_sum: f64,
    kl_sum: f64,
    over_sum: f64,
    rew_sq_sum: f64,
}

fn gru_params(p: &ModelParams) -> GruParams<'_> {
    let l = &p.layout;
    GruParams {
        wr_x: p.slice(&l.gru_wr_x),
        wr_h: p.slice(&l.gru_wr_h),
        br: p.slice(&l.gru_br),
        wu_x: p.slice(&l.gru_wu_x),
        wu_h: p.slice(&l.gru_wu_h),
        bu: p.slice(&l.gru_bu),
        wc_x: p.slice(&l.gru_wc_x),
        wc_h: p.slice(&l.gru_wc_h),
        bc: p.slice(&l.gru_bc),
    }
}

fn gauss_head_fwd(
    p: &ModelParams,
    fc_w: &std::ops::Range<usize>,
    fc_b: &std::ops::Range<usize>,
    out_w: &std::ops::Range<usize>,
    out_b: &std::ops::Range<usize>,
    input: Vec<f64>,
) -> GaussHeadCache {
    let latent = p.geom.latent;
    let mut hid_pre = vec![0.0; p.geom.head_hidden];
    dense_fwd(p.slice(fc_w), p.slice(fc_b), &input, &mut hid_pre);
    let mut hid = vec![0.0; hid_pre.len()];
    silu_fwd(&hid_pre, &mut hid);
    let mut raw = vec![0.0; 2 * latent];
    dense_fwd(p.slice(out_w), p.slice(out_b), &hid, &mut raw);
    let mean = raw[..latent].to_vec();
    let (lo, hi) = (p.config.logstd_min, p.config.logstd_max);
    let logstd: Vec<f64> = raw[latent..].iter().map(|&r| bound_logstd(r, lo, hi)).collect();
    GaussHeadCache {
        input,
        hid_pre,
        hid,
        raw,
        mean,
        logstd,
    }
}

/// Splits `grads` into the four tensors of one head family (contiguous in
/// the layout) and backprops through it, accumulating `dinput`.
#[allow(clippy::too_many_arguments)]
fn gauss_head_bwd(
    p: &ModelParams,
    cache: &GaussHeadCache,
    fc_w: &std::ops::Range<usize>,
    fc_b: &std::ops::Range<usize>,
    out_w: &std::ops::Range<usize>,
    out_b: &std::ops::Range<usize>,
    dmean: &[f64],
    dlogstd: &[f64],
    grads: &mut [f64],
    dinput: &mut [f64],
) {
    let latent = p.geom.latent;
    let (lo, hi) = (p.config.logstd_min, p.config.logstd_max);
    let mut draw = vec![0.0; 2 * latent];
    draw[..latent].copy_from_slice(dmean);
    for i in 0..latent {
        draw[latent + i] = dlogstd[i] * bound_logstd_deriv(cache.raw[latent + i], lo, hi);
    }
    let region = &mut grads[fc_w.start..out_b.end];
    let (g_fc_w, rest) = region.split_at_mut(fc_w.len());
    let (g_fc_b, rest) = rest.split_at_mut(fc_b.len());
    let (g_out_w, g_out_b) = rest.split_at_mut(out_w.len());

    let mut dhid = vec![0.0; cache.hid.len()];
    dense_bwd(p.slice(out_w), &cache.hid, &draw, g_out_w, g_out_b, Some(&mut dhid));
    let mut dhid_pre = vec![0.0; cache.hid_pre.len()];
    silu_bwd(&cache.hid_pre, &dhid, &mut dhid_pre);
    dense_bwd(p.slice(fc_w), &cache.input, &dhid_pre, g_fc_w, g_fc_b, Some(dinput));
}

fn encoder_fwd(p: &ModelParams, obs: &[f64]) -> EncCache {
    let g = &p.geom;
    let l = &p.layout;
    let mut conv1_pre = vec![0.0; g.c1 * g.g1 * g.g1];
    conv_fwd(
        p.slice(&l.enc_conv1_w),
        p.slice(&l.enc_conv1_b),
        1,
        g.c1,
        g.grid,
        g.kernel,
        obs,
        &mut conv1_pre,
    );
    let mut conv1_act = vec![0.0; conv1_pre.len()];
    silu_fwd(&conv1_pre, &mut conv1_act);
    let mut conv2_pre = vec![0.0; g.c2 * g.g2 * g.g2];
    conv_fwd(
        p.slice(&l.enc_conv2_w),
        p.slice(&l.enc_conv2_b),
        g.c1,
        g.c2,
        g.g1,
        g.kernel,
        &conv1_act,
        &mut conv2_pre,
    );
    let mut conv2_act = vec![0.0; conv2_pre.len()];
    silu_fwd(&conv2_pre, &mut conv2_act);
    let mut fc_pre = vec![0.0; g.feature];
    dense_fwd(p.slice(&l.enc_fc_w), p.slice(&l.enc_fc_b), &conv2_act, &mut fc_pre);
    let mut feat = vec![0.0; g.feature];
    silu_fwd(&fc_pre, &mut feat);
    EncCache {
        conv1_pre,
        conv1_act,
        conv2_pre,
        conv2_act,
        fc_pre,
        feat,
    }
}

fn encoder_bwd(p: &ModelParams, cache: &EncCache, obs: &[f64], dfeat: &[f64], grads: &mut [f64]) {
    let g = &p.geom;
    let l = &p.layout;
    let region = &mut grads[l.enc_conv1_w.start..l.enc_fc_b.end];
    let (g_c1w, rest) = region.split_at_mut(l.enc_conv1_w.len());
    let (g_c1b, rest) = rest.split_at_mut(l.enc_conv1_b.len());
    let (g_c2w, rest) = rest.split_at_mut(l.enc_conv2_w.len());
    let (g_c2b, rest) = rest.split_at_mut(l.enc_conv2_b.len());
    let (g_fcw, g_fcb) = rest.split_at_mut(l.enc_fc_w.len());

    let mut dfc_pre = vec![0.0; cache.fc_pre.len()];
    silu_bwd(&cache.fc_pre, dfeat, &mut dfc_pre);
    let mut dconv2_act = vec![0.0; cache.conv2_act.len()];
    dense_bwd(
        p.slice(&l.enc_fc_w),
        &cache.conv2_act,
        &dfc_pre,
        g_fcw,
        g_fcb,
        Some(&mut dconv2_act),
    );
    let mut dconv2_pre = vec![0.0; cache.conv2_pre.len()];
    silu_bwd(&cache.conv2_pre, &dconv2_act, &mut dconv2_pre);
    let mut dconv1_act = vec![0.0; cache.conv1_act.len()];
    conv_bwd(
        p.slice(&l.enc_conv2_w),
        &cache.conv1_act,
        &dconv2_pre,
        g.c1,
        g.c2,
        g.g1,
        g.kernel,
        g_c2w,
        g_c2b,
        Some(&mut dconv1_act),
    );
    let mut dconv1_pre = vec![0.0; cache.conv1_pre.len()];
    silu_bwd(&cache.conv1_pre, &dconv1_act, &mut dconv1_pre);
    conv_bwd(
        p.slice(&l.enc_conv1_w),
        obs,
        &dconv1_pre,
        1,
        g.c1,
        g.grid,
        g.kernel,
        g_c1w,
        g_c1b,
        None,
    );
}

fn decoder_fwd(p: &ModelParams, input: Vec<f64>) -> DecCache {
    let g = &p.geom;
    let l = &p.layout;
    let mut fc1_pre = vec![0.0; g.feature];
    dense_fwd(p.slice(&l.dec_fc1_w), p.slice(&l.dec_fc1_b), &input, &mut fc1_pre);
    let mut fc1_act = vec![0.0; fc1_pre.len()];
    silu_fwd(&fc1_pre, &mut fc1_act);
    let mut fc2_pre = vec![0.0; g.enc_flat];
    dense_fwd(p.slice(&l.dec_fc2_w), p.slice(&l.dec_fc2_b), &fc1_act, &mut fc2_pre);
    let mut fc2_act = vec![0.0; fc2_pre.len()];
    silu_fwd(&fc2_pre, &mut fc2_act);
    let mut deconv1_pre = vec![0.0; g.c1 * g.g1 * g.g1];
    deconv_fwd(
        p.slice(&l.dec_deconv1_w),
        p.slice(&l.dec_deconv1_b),
        g.c2,
        g.c1,
        g.g2,
        g.kernel,
        &fc2_act,
        &mut deconv1_pre,
    );
    let mut deconv1_act = vec![0.0; deconv1_pre.len()];
    silu_fwd(&deconv1_pre, &mut deconv1_act);
    let mut recon = vec![0.0; g.pixels];
    deconv_fwd(
        p.slice(&l.dec_deconv2_w),
        p.slice(&l.dec_deconv2_b),
        g.c1,
        1,
        g.g1,
        g.kernel,
        &deconv1_act,
        &mut recon,
    );
    DecCache {
        input,
        fc1_pre,
        fc1_act,
        fc2_pre,
        fc2_act,
        deconv1_pre,
        deconv1_act,
        recon,
    }
}

fn decoder_bwd(
    p: &ModelParams,
    cache: &DecCache,
    drecon: &[f64],
    grads: &mut [f64],
    dinput: &mut [f64],
) {
    let g = &p.geom;
    let l = &p.layout;
    let region = &mut grads[l.dec_fc1_w.start..l.dec_deconv2_b.end];
    let (g_f1w, rest) = region.split_at_mut(l.dec_fc1_w.len());
    let (g_f1b, rest) = rest.split_at_mut(l.dec_fc1_b.len());
    let (g_f2w, rest) = rest.split_at_mut(l.dec_fc2_w.len());
    let (g_f2b, rest) = rest.split_at_mut(l.dec_fc2_b.len());
    let (g_d1w, rest) = rest.split_at_mut(l.dec_deconv1_w.len());
    let (g_d1b, rest) = rest.split_at_mut(l.dec_deconv1_b.len());
    let (g_d2w, g_d2b) = rest.split_at_mut(l.dec_deconv2_w.len());

    let mut ddeconv1_act = vec![0.0; cache.deconv1_act.len()];
    deconv_bwd(
        p.slice(&l.dec_deconv2_w),
        &cache.deconv1_act,
        drecon,
        g.c1,
        1,
        g.g1,
        g.kernel,
        g_d2w,
        g_d2b,
        Some(&mut ddeconv1_act),
    );
    let mut ddeconv1_pre = vec![0.0; cache.deconv1_pre.len()];
    silu_bwd(&cache.deconv1_pre, &ddeconv1_act, &mut ddeconv1_pre);
    let mut dfc2_act = vec![0.0; cache.fc2_act.len()];
    deconv_bwd(
        p.slice(&l.dec_deconv1_w),
        &cache.fc2_act,
        &ddeconv1_pre,
        g.c2,
        g.c1,
        g.g2,
        g.kernel,
        g_d1w,
        g_d1b,
        Some(&mut dfc2_act),
    );
    let mut dfc2_pre = vec![0.0; cache.fc2_pre.len()];
    silu_bwd(&cache.fc2_pre, &dfc2_act, &mut dfc2_pre);
    let mut dfc1_act = vec![0.0; cache.fc1_act.len()];
    dense_bwd(
        p.slice(&l.dec_fc2_w),
        &cache.fc1_act,
        &dfc2_pre,
        g_f2w,
        g_f2b,
        Some(&mut dfc1_act),
    );
    let mut dfc1_pre = vec![0.0; cache.fc1_pre.len()];
    silu_bwd(&cache.fc1_pre, &dfc1_act, &mut dfc1_pre);
    dense_bwd(
        p.slice(&l.dec_fc1_w),
        &cache.input,
        &dfc1_pre,
        g_f1w,
        g_f1b,
        Some(dinput),
    );
}

fn reward_fwd(p: &ModelParams, input: Vec<f64>) -> RewCache {
    let l = &p.layout;
    let mut hid_pre = vec![0.0; p.geom.head_hidden];
    dense_fwd(p.slice(&l.rew_fc_w), p.slice(&l.rew_fc_b), &input, &mut hid_pre);
    let mut hid = vec![0.0; hid_pre.len()];
    silu_fwd(&hid_pre, &mut hid);
    let mut out = [0.0];
    dense_fwd(p.slice(&l.rew_out_w), p.slice(&l.rew_out_b), &hid, &mut out);
    RewCache {
        input,
        hid_pre,
        hid,
        rhat: out[0],
    }
}

fn reward_bwd(p: &ModelParams, cache: &RewCache, drhat: f64, grads: &mut [f64], dinput: &mut [f64]) {
    let l = &p.layout;
    let region = &mut grads[l.rew_fc_w.start..l.rew_out_b.end];
    let (g_fcw, rest) = region.split_at_mut(l.rew_fc_w.len());
    let (g_fcb, rest) = rest.split_at_mut(l.rew_fc_b.len());
    let (g_ow, g_ob) = rest.split_at_mut(l.rew_out_w.len());

    let mut dhid = vec![0.0; cache.hid.len()];
    dense_bwd(p.slice(&l.rew_out_w), &cache.hid, &[drhat], g_ow, g_ob, Some(&mut dhid));
    let mut dhid_pre = vec![0.0; cache.hid_pre.len()];
    silu_bwd(&cache.hid_pre, &dhid, &mut dhid_pre);
    dense_bwd(p.slice(&l.rew_fc_w), &cache.input, &dhid_pre, g_fcw, g_fcb, Some(dinput));
}

fn split_gru_grads<'a>(grads: &'a mut [f64], p: &ModelParams) -> GruGrads<'a> {
    let l = &p.layout;
    let region = &mut grads[l.gru_wr_x.start..l.gru_bc.end];
    let (wr_x, rest) = region.split_at_mut(l.gru_wr_x.len());
    let (wr_h, rest) = rest.split_at_mut(l.gru_wr_h.len());
    let (br, rest) = rest.split_at_mut(l.gru_br.len());
    let (wu_x, rest) = rest.split_at_mut(l.gru_wu_x.len());
    let (wu_h, rest) = rest.split_at_mut(l.gru_wu_h.len());
    let (bu, rest) = rest.split_at_mut(l.gru_bu.len());
    let (wc_x, rest) = rest.split_at_mut(l.gru_wc_x.len());
    let (wc_h, bc) = rest.split_at_mut(l.gru_wc_h.len());
    GruGrads {
        wr_x,
        wr_h,
        br,
        wu_x,
        wu_h,
        bu,
        wc_x,
        wc_h,
        bc,
    }
}

fn one_hot(index: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

/// Forward pass over one sequence. `obs` has `prims.len() + 1` frames.
fn seq_forward(
    p: &ModelParams,
    obs: &[Vec<f64>],
    prims: &[usize],
    rewards: &[f64],
    noise: &Noise,
    b: usize,
    overshoot: bool,
) -> SeqResult {
    let g = &p.geom;
    let l = &p.layout;
    let gp = gru_params(p);
    let frames_n = obs.len();
    let mut frames: Vec<FrameCache> = Vec::with_capacity(frames_n);
    let mut h_prev = vec![0.0; g.hidden];
    let mut z_prev = vec![0.0; g.latent];
    let mut recon_sum = 0.0;
    let mut kl_total = 0.0;
    let mut over_sum = 0.0;
    let mut rew_sq_sum = 0.0;

    for t in 0..frames_n {
        let act = if t == 0 {
            vec![0.0; g.act_dim]
        } else {
            one_hot(prims[t - 1], g.act_dim)
        };
        let mut x = Vec::with_capacity(g.gru_in);
        x.extend_from_slice(&z_prev);
        x.extend_from_slice(&act);
        let gru = gru_fwd(&gp, &x, &h_prev);
        let h = gru.h.clone();

        let prior = gauss_head_fwd(p, &l.prior_fc_w, &l.prior_fc_b, &l.prior_out_w, &l.prior_out_b, h.clone());
        let enc = encoder_fwd(p, &obs[t]);
        let mut post_in = Vec::with_capacity(g.hidden + g.feature);
        post_in.extend_from_slice(&h);
        post_in.extend_from_slice(&enc.feat);
        let post = gauss_head_fwd(p, &l.post_fc_w, &l.post_fc_b, &l.post_out_w, &l.post_out_b, post_in);

        let eps = noise.frame(b, t).to_vec();
        let z: Vec<f64> = post
            .mean
            .iter()
            .zip(&post.logstd)
            .zip(&eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();

        let mut dec_in = Vec::with_capacity(g.dec_in);
        dec_in.extend_from_slice(&h);
        dec_in.extend_from_slice(&z);
        let dec = decoder_fwd(p, dec_in.clone());
        let rew = reward_fwd(p, dec_in);

        let mse_t: f64 = dec
            .recon
            .iter()
            .zip(&obs[t])
            .map(|(d, m)| (d - m) * (d - m))
            .sum::<f64>()
            / g.pixels as f64;
        recon_sum += mse_t;
        kl_total += kl_sum(&post.mean, &post.logstd, &prior.mean, &prior.logstd);
        if t >= 1 {
            let err = rew.rhat - rewards[t - 1];
            rew_sq_sum += err * err;
        }

        let over = if overshoot && t >= 1 {
            let prev_frame = frames.last().expect("t >= 1");
            let mut xo = Vec::with_capacity(g.gru_in);
            xo.extend_from_slice(&prev_frame.prior.mean);
            xo.extend_from_slice(&act);
            let gru_o = gru_fwd(&gp, &xo, &prev_frame.gru.h);
            let head = gauss_head_fwd(
                p,
                &l.prior_fc_w,
                &l.prior_fc_b,
                &l.prior_out_w,
                &l.prior_out_b,
                gru_o.h.clone(),
            );
            over_sum += kl_sum(&post.mean, &post.logstd, &head.mean, &head.logstd);
            Some(OverCache { gru: gru_o, head })
        } else {
            None
        };

        h_prev = h;
        z_prev = z.clone();
        frames.push(FrameCache {
            gru,
            prior,
            enc,
            post,
            eps,
            z,
            dec,
            rew,
            over,
        });
    }

    SeqResult {
        frames,
        recon_sum,
        kl_sum: kl_total,
        over_sum,
        rew_sq_sum,
    }
}

struct Scales {
    recon: f64,
    kl: f64,
    over: f64,
    rew: f64,
}

/// Backward pass over one sequence, accumulating into `grads`.
fn seq_backward(
    p: &ModelParams,
    obs: &[Vec<f64>],
    rewards: &[f64],
    result: &SeqResult,
    scales: &Scales,
    grads: &mut [f64],
) {
    let g = &p.geom;
    let l = &p.layout;
    let gp = gru_params(p);
    let frames_n = result.frames.len();

    // Gradients flowing backward across frames.
    let mut pending_dh = vec![0.0; g.hidden];
    let mut pending_dz = vec![0.0; g.latent];
    let mut pending_dpm = vec![0.0; g.latent]; // into prior_mean_{t-1} from overshoot at t

    for t in (0..frames_n).rev() {
        let fc = &result.frames[t];
        let mut dh = std::mem::replace(&mut pending_dh, vec![0.0; g.hidden]);
        let mut dz = std::mem::replace(&mut pending_dz, vec![0.0; g.latent]);
        let dpm_extra = std::mem::replace(&mut pending_dpm, vec![0.0; g.latent]);

        // Reward head (targets exist for t >= 1).
        if t >= 1 {
            let drhat = 2.0 * (fc.rew.rhat - rewards[t - 1]) * scales.rew;
            let mut d_in = vec![0.0; g.dec_in];
            reward_bwd(p, &fc.rew, drhat, grads, &mut d_in);
            for i in 0..g.hidden {
                dh[i] += d_in[i];
            }
            for i in 0..g.latent {
                dz[i] += d_in[g.hidden + i];
            }
        }

        // Decoder reconstruction.
        {
            let drecon: Vec<f64> = fc
                .dec
                .recon
                .iter()
                .zip(&obs[t])
                .map(|(d, m)| 2.0 * (d - m) * scales.recon)
                .collect();
            let mut d_in = vec![0.0; g.dec_in];
            decoder_bwd(p, &fc.dec, &drecon, grads, &mut d_in);
            for i in 0..g.hidden {
                dh[i] += d_in[i];
            }
            for i in 0..g.latent {
                dz[i] += d_in[g.hidden + i];
            }
        }

        // KL terms.
        let mut dmq = vec![0.0; g.latent];
        let mut dlq = vec![0.0; g.latent];
        let mut dmp = dpm_extra;
        let mut dlp = vec![0.0; g.latent];
        kl_backward(
            &fc.post.mean,
            &fc.post.logstd,
            &fc.prior.mean,
            &fc.prior.logstd,
            scales.kl,
            &mut dmq,
            &mut dlq,
            &mut dmp,
            &mut dlp,
        );
        if let Some(over) = &fc.over {
            let mut dmo = vec![0.0; g.latent];
            let mut dlo = vec![0.0; g.latent];
            kl_backward(
                &fc.post.mean,
                &fc.post.logstd,
                &over.head.mean,
                &over.head.logstd,
                scales.over,
                &mut dmq,
                &mut dlq,
                &mut dmo,
                &mut dlo,
            );
            // Overshoot prior head and its GRU branch.
            let mut dh_o = vec![0.0; g.hidden];
            gauss_head_bwd(
                p,
                &over.head,
                &l.prior_fc_w,
                &l.prior_fc_b,
                &l.prior_out_w,
                &l.prior_out_b,
                &dmo,
                &dlo,
                grads,
                &mut dh_o,
            );
            let mut dx_o = vec![0.0; g.gru_in];
            {
                let mut gg = split_gru_grads(grads, p);
                gru_bwd(&gp, &over.gru, &dh_o, &mut gg, &mut dx_o, &mut pending_dh);
            }
            for i in 0..g.latent {
                pending_dpm[i] += dx_o[i];
            }
        }

        // Prior head on the main path.
        gauss_head_bwd(
            p,
            &fc.prior,
            &l.prior_fc_w,
            &l.prior_fc_b,
            &l.prior_out_w,
            &l.prior_out_b,
            &dmp,
            &dlp,
            grads,
            &mut dh,
        );

        // Reparameterized sample: z = mean + exp(logstd) * eps.
        for i in 0..g.latent {
            dmq[i] += dz[i];
            dlq[i] += dz[i] * fc.eps[i] * fc.post.logstd[i].exp();
        }
        let mut d_post_in = vec![0.0; g.hidden + g.feature];
        gauss_head_bwd(
            p,
            &fc.post,
            &l.post_fc_w,
            &l.post_fc_b,
            &l.post_out_w,
            &l.post_out_b,
            &dmq,
            &dlq,
            grads,
            &mut d_post_in,
        );
        for i in 0..g.hidden {
            dh[i] += d_post_in[i];
        }
        let dfeat = &d_post_in[g.hidden..];
        encoder_bwd(p, &fc.enc, &obs[t], dfeat, grads);

        // Main recurrent step.
        let mut dx = vec![0.0; g.gru_in];
        {
            let mut gg = split_gru_grads(grads, p);
            gru_bwd(&gp, &fc.gru, &dh, &mut gg, &mut dx, &mut pending_dh);
        }
        pending_dz.copy_from_slice(&dx[..g.latent]);
    }
}

fn batch_scales(p: &ModelParams, batch_size: usize, frames: usize, weights: &LossWeights) -> Scales {
    let b = batch_size as f64;
    let f = frames as f64;
    let trans = (frames - 1) as f64;
    Scales {
        recon: weights.recon / (b * f * p.geom.pixels as f64),
        kl: weights.kl / (b * f),
        over: if p.config.overshoot {
            weights.kl / (b * trans)
        } else {
            0.0
        },
        rew: weights.reward / (b * trans),
    }
}

fn breakdown(
    p: &ModelParams,
    parts: &[(f64, f64, f64, f64)],
    frames: usize,
    weights: &LossWeights,
) -> LossBreakdown {
    let b = parts.len() as f64;
    let f = frames as f64;
    let trans = (frames - 1) as f64;
    let mut recon = 0.0;
    let mut kl = 0.0;
    let mut over = 0.0;
    let mut rew = 0.0;
    for &(r, k, o, w) in parts {
        recon += r;
        kl += k;
        over += o;
        rew += w;
    }
    recon /= b * f;
    kl /= b * f;
    over /= b * trans;
    rew /= b * trans;
    let kl_component = if p.config.overshoot { kl + over } else { kl };
    LossBreakdown {
        total: weights.recon * recon + weights.kl * kl_component + weights.reward * rew,
        recon,
        kl: kl_component,
        reward_mse: rew,
    }
}

/// Loss over a batch under frozen noise. Components are raw means; the total
/// applies the weights.
pub fn loss(
    batch: &TrainBatch,
    params: &ModelParams,
    weights: LossWeights,
    noise: &Noise,
) -> Result<LossBreakdown, ModelError> {
    batch.validate(&params.config)?;
    let frames = batch.frames();
    let obs_f: Vec<Vec<Vec<f64>>> = batch
        .obs
        .iter()
        .map(|seq| seq.iter().map(obs_to_vec).collect())
        .collect();
    let parts: Vec<(f64, f64, f64, f64)> = (0..batch.batch_size())
        .into_par_iter()
        .map(|b| {
            let r = seq_forward(
                params,
                &obs_f[b],
                &batch.prims[b],
                &batch.rewards[b],
                noise,
                b,
                params.config.overshoot,
            );
            (r.recon_sum, r.kl_sum, r.over_sum, r.rew_sq_sum)
        })
        .collect();
    Ok(breakdown(params, &parts, frames, &weights))
}

/// Loss plus analytic gradients for every parameter.
pub fn grad(
    batch: &TrainBatch,
    params: &ModelParams,
    weights: LossWeights,
    noise: &Noise,
) -> Result<(LossBreakdown, Vec<f64>), ModelError> {
    batch.validate(&params.config)?;
    let frames = batch.frames();
    let scales = batch_scales(params, batch.batch_size(), frames, &weights);
    let obs_f: Vec<Vec<Vec<f64>>> = batch
        .obs
        .iter()
        .map(|seq| seq.iter().map(obs_to_vec).collect())
        .collect();
    let results: Vec<((f64, f64, f64, f64), Vec<f64>)> = (0..batch.batch_size())
        .into_par_iter()
        .map(|b| {
            let r = seq_forward(
                params,
                &obs_f[b],
                &batch.prims[b],
                &batch.rewards[b],
                noise,
                b,
                params.config.overshoot,
            );
            let mut grads = vec![0.0; params.param_count()];
            seq_backward(params, &obs_f[b], &batch.rewards[b], &r, &scales, &mut grads);
            ((r.recon_sum, r.kl_sum, r.over_sum, r.rew_sq_sum), grads)
        })
        .collect();

    let parts: Vec<(f64, f64, f64, f64)> = results.iter().map(|(p, _)| *p).collect();
    let out = breakdown(params, &parts, frames, &weights);
    if !out.total.is_finite() {
        return Err(ModelError::NonFinite("batch loss".into()));
    }
    // Fixed reduction order over batch elements keeps results bit-stable.
    let mut grads = vec![0.0; params.param_count()];
    for (_, g) in &results {
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((out, grads))
}

/// Filtered posterior latents, one per observation, sampled with seeded
/// noise.
pub fn posterior_encode(
    obs_seq: &[ObsGrid],
    act_seq: &[usize],
    params: &ModelParams,
    noise_seed: u64,
) -> Result<Vec<LatentState>, ModelError> {
    let noise = Noise::sample(noise_seed, 1, obs_seq.len(), params.geom.latent);
    encode_with(obs_seq, act_seq, params, &noise)
}

/// Posterior latents with zero noise: the sample equals the mean. Used by
/// planning, where the conditioning state should be the best point estimate.
pub fn posterior_encode_mean(
    obs_seq: &[ObsGrid],
    act_seq: &[usize],
    params: &ModelParams,
) -> Result<Vec<LatentState>, ModelError> {
    let noise = Noise::zeros(1, obs_seq.len(), params.geom.latent);
    encode_with(obs_seq, act_seq, params, &noise)
}

fn encode_with(
    obs_seq: &[ObsGrid],
    act_seq: &[usize],
    params: &ModelParams,
    noise: &Noise,
) -> Result<Vec<LatentState>, ModelError> {
    if obs_seq.is_empty() {
        return Err(ModelError::ShapeMismatch("empty observation history".into()));
    }
    if act_seq.len() + 1 != obs_seq.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "need len(actions) = len(observations) - 1, got {} and {}",
            act_seq.len(),
            obs_seq.len()
        )));
    }
    for o in obs_seq {
        if o.width != params.config.grid_size || o.height != params.config.grid_size {
            return Err(ModelError::ShapeMismatch(format!(
                "mask is {}x{}, model expects {}",
                o.width, o.height, params.config.grid_size
            )));
        }
    }
    for &a in act_seq {
        if a >= params.geom.act_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "primitive index {a} out of range"
            )));
        }
    }
    let obs_f: Vec<Vec<f64>> = obs_seq.iter().map(obs_to_vec).collect();
    let rewards = vec![0.0; act_seq.len()];
    let result = seq_forward(params, &obs_f, act_seq, &rewards, noise, 0, false);
    Ok(result
        .frames
        .into_iter()
        .map(|f| LatentState {
            deterministic: f.gru.h,
            stochastic_mean: f.post.mean,
            stochastic_logstd: f.post.logstd,
            sample: f.z,
        })
        .collect())
}

/// Prior latent after executing `prim` from `prev`, usable without any
/// observation. The sample is the prior mean, so imagination chains are
/// deterministic.
pub fn prior_transition(prev: &LatentState, prim: usize, params: &ModelParams) -> LatentState {
    let g = &params.geom;
    let l = &params.layout;
    assert_eq!(prev.deterministic.len(), g.hidden, "hidden size mismatch");
    assert_eq!(prev.sample.len(), g.latent, "latent size mismatch");
    assert!(prim < g.act_dim, "primitive index out of range");
    let mut x = Vec::with_capacity(g.gru_in);
    x.extend_from_slice(&prev.sample);
    x.extend_from_slice(&one_hot(prim, g.act_dim));
    let gru = gru_fwd(&gru_params(params), &x, &prev.deterministic);
    let head = gauss_head_fwd(
        params,
        &l.prior_fc_w,
        &l.prior_fc_b,
        &l.prior_out_w,
        &l.prior_out_b,
        gru.h.clone(),
    );
    LatentState {
        deterministic: gru.h,
        sample: head.mean.clone(),
        stochastic_mean: head.mean,
        stochastic_logstd: head.logstd,
    }
}

/// Decode a latent back to a real-valued mask grid (row-major,
/// `grid_size^2` entries).
pub fn decode_obs(latent: &LatentState, params: &ModelParams) -> Vec<f64> {
    let g = &params.geom;
    assert_eq!(latent.deterministic.len(), g.hidden, "hidden size mismatch");
    assert_eq!(latent.sample.len(), g.latent, "latent size mismatch");
    let mut input = Vec::with_capacity(g.dec_in);
    input.extend_from_slice(&latent.deterministic);
    input.extend_from_slice(&latent.sample);
    decoder_fwd(params, input).recon
}

/// Decode the scalar reward attached to a latent state.
pub fn decode_reward(latent: &LatentState, params: &ModelParams) -> f64 {
    let g = &params.geom;
    assert_eq!(latent.deterministic.len(), g.hidden, "hidden size mismatch");
    assert_eq!(latent.sample.len(), g.latent, "latent size mismatch");
    let mut input = Vec::with_capacity(g.dec_in);
    input.extend_from_slice(&latent.deterministic);
    input.extend_from_slice(&latent.sample);
    reward_fwd(params, input).rhat
}
