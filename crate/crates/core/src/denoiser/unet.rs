use super::layers::{
    silu, silu_backward, AttentionBlock, AttentionCache, Conv2d, GroupNorm, GroupNormCache, Layout,
    Linear, Params, ResBlock, ResBlockCache,
};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::DenoiserConfig;

struct Stage {
    res: ResBlock,
    attn: Option<AttentionBlock>,
}

struct StageCache<T> {
    res: ResBlockCache<T>,
    attn: Option<AttentionCache<T>>,
}

impl Stage {
    fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, cfg: &DenoiserConfig, attn: bool) -> Self {
        Stage {
            res: ResBlock::new(layout, &format!("{name}.res"), cin, cout, cfg.timestep_embedding_dim, cfg.norm_groups),
            attn: attn.then(|| {
                AttentionBlock::new(layout, &format!("{name}.attn"), cout, cfg.attention_heads, cfg.norm_groups)
            }),
        }
    }

    fn forward<T: Scalar>(&self, p: &Params<T>, x: Tensor<T>, temb: &Tensor<T>) -> (Tensor<T>, StageCache<T>) {
        let (h, res) = self.res.forward(p, x, temb);
        match &self.attn {
            Some(a) => {
                let (h, ac) = a.forward(p, h);
                (h, StageCache { res, attn: Some(ac) })
            }
            None => (h, StageCache { res, attn: None }),
        }
    }

    fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        cache: &StageCache<T>,
        temb: &Tensor<T>,
        dy: Tensor<T>,
        dtemb: &mut Tensor<T>,
    ) -> Tensor<T> {
        let dy = match (&self.attn, &cache.attn) {
            (Some(a), Some(ac)) => a.backward(p, g, ac, &dy),
            _ => dy,
        };
        self.res.backward(p, g, &cache.res, temb, &dy, dtemb)
    }
}

struct Level {
    stages: Vec<Stage>,
    /// Strided conv to the next level (down path) or upsample conv to the previous one (up path).
    resample: Option<Conv2d>,
}

/// Diffusion U-Net: per-level residual stages with skip connections,
/// self-attention on configured levels and a sinusoidal timestep embedding.
pub(crate) struct UNet {
    embed_dim: usize,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    down: Vec<Level>,
    mid: [Stage; 2],
    /// Ordered deepest first.
    up: Vec<Level>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

pub(crate) struct ForwardCache<T> {
    temb_in: Tensor<T>,
    t1: Tensor<T>,
    temb: Tensor<T>,
    temb_act: Tensor<T>,
    input: Tensor<T>,
    down: Vec<(Vec<StageCache<T>>, Option<Tensor<T>>)>,
    mid: Vec<StageCache<T>>,
    /// Per up level: stage caches with their concat split and the pre-upsample input.
    up: Vec<(Vec<(StageCache<T>, usize)>, Option<Tensor<T>>)>,
    out_norm: GroupNormCache<T>,
    out_a: Tensor<T>,
    out_s: Tensor<T>,
}

/// Sinusoidal embedding of integer timesteps, `(n, dim, 1, 1)`.
pub(crate) fn timestep_embedding<T: Scalar>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Tensor::zeros(ts.len(), dim, 1, 1);
    for (row, &t) in out.data.chunks_exact_mut(dim).zip(ts) {
        for k in 0..half {
            let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            row[k] = T::of(arg.sin());
            row[half + k] = T::of(arg.cos());
        }
    }
    out
}

impl UNet {
    pub fn new(cfg: &DenoiserConfig, layout: &mut Layout) -> Self {
        let ch = &cfg.level_channels;
        let levels = ch.len();
        let embed_dim = ch[0];
        let temb = cfg.timestep_embedding_dim;
        let time1 = Linear::new(layout, "time_embed.0", embed_dim, temb);
        let time2 = Linear::new(layout, "time_embed.2", temb, temb);
        let conv_in = Conv2d::new(layout, "conv_in", cfg.in_channels, ch[0], 3, 1, false);

        let mut down = Vec::with_capacity(levels);
        let mut cur = ch[0];
        for (i, &c) in ch.iter().enumerate() {
            let attn = cfg.attention_levels.contains(&i);
            let stages = (0..cfg.res_blocks_per_level)
                .map(|b| {
                    let s = Stage::new(layout, &format!("down.{i}.{b}"), cur, c, cfg, attn);
                    cur = c;
                    s
                })
                .collect();
            let resample = (i + 1 < levels).then(|| Conv2d::new(layout, &format!("down.{i}.downsample"), c, c, 3, 2, false));
            down.push(Level { stages, resample });
        }

        let deepest = levels - 1;
        let mid_attn = cfg.attention_levels.contains(&deepest);
        let mid = [
            Stage::new(layout, "mid.0", cur, cur, cfg, mid_attn),
            Stage::new(layout, "mid.1", cur, cur, cfg, false),
        ];

        let mut up = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let c = ch[i];
            let attn = cfg.attention_levels.contains(&i);
            let stages = (0..cfg.res_blocks_per_level)
                .map(|b| {
                    let s = Stage::new(layout, &format!("up.{i}.{b}"), cur + c, c, cfg, attn);
                    cur = c;
                    s
                })
                .collect();
            let resample = (i > 0).then(|| Conv2d::new(layout, &format!("up.{i}.upsample"), c, ch[i - 1], 3, 1, false));
            if i > 0 {
                cur = ch[i - 1];
            }
            up.push(Level { stages, resample });
        }

        let out_norm = GroupNorm::new(layout, "out.norm", cfg.norm_groups, ch[0]);
        let out_conv = Conv2d::new(layout, "out.conv", ch[0], cfg.out_channels, 3, 1, true);
        UNet {
            embed_dim,
            time1,
            time2,
            conv_in,
            down,
            mid,
            up,
            out_norm,
            out_conv,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, input: Tensor<T>, ts: &[usize]) -> (Tensor<T>, ForwardCache<T>) {
        assert_eq!(ts.len(), input.n, "one timestep per batch item");
        let temb_in = timestep_embedding::<T>(ts, self.embed_dim);
        let t1 = self.time1.forward(p, &temb_in);
        let temb = self.time2.forward(p, &silu(&t1));
        let temb_act = silu(&temb);

        let mut h = self.conv_in.forward(p, &input);
        let mut skips = Vec::new();
        let mut down_caches = Vec::with_capacity(self.down.len());
        for level in &self.down {
            let mut caches = Vec::with_capacity(level.stages.len());
            for stage in &level.stages {
                let (out, c) = stage.forward(p, h, &temb_act);
                skips.push(out.clone());
                caches.push(c);
                h = out;
            }
            let pre = match &level.resample {
                Some(conv) => {
                    let next = conv.forward(p, &h);
                    Some(std::mem::replace(&mut h, next))
                }
                None => None,
            };
            down_caches.push((caches, pre));
        }

        let mut mid_caches = Vec::with_capacity(2);
        for stage in &self.mid {
            let (out, c) = stage.forward(p, h, &temb_act);
            mid_caches.push(c);
            h = out;
        }

        let mut up_caches = Vec::with_capacity(self.up.len());
        for level in &self.up {
            let mut caches = Vec::with_capacity(level.stages.len());
            for stage in &level.stages {
                let skip = skips.pop().expect("one skip per up stage");
                let split = h.c;
                let cat = Tensor::concat_channels(&h, &skip);
                let (out, c) = stage.forward(p, cat, &temb_act);
                caches.push((c, split));
                h = out;
            }
            let pre = match &level.resample {
                Some(conv) => {
                    let next = conv.forward(p, &h.upsample2());
                    Some(std::mem::replace(&mut h, next))
                }
                None => None,
            };
            up_caches.push((caches, pre));
        }

        let (out_a, out_norm) = self.out_norm.forward(p, &h);
        let out_s = silu(&out_a);
        let out = self.out_conv.forward(p, &out_s);
        let cache = ForwardCache {
            temb_in,
            t1,
            temb,
            temb_act,
            input,
            down: down_caches,
            mid: mid_caches,
            up: up_caches,
            out_norm,
            out_a,
            out_s,
        };
        (out, cache)
    }

    /// Accumulate parameter gradients of `<output, dy>` into `g`.
    pub fn backward<T: Scalar>(&self, p: &Params<T>, g: &mut Params<T>, cache: &ForwardCache<T>, dy: &Tensor<T>) {
        let mut dtemb = cache.temb_act.zeros_like();
        let ds = self.out_conv.backward(p, g, &cache.out_s, dy);
        let da = silu_backward(&cache.out_a, &ds);
        let mut dh = self.out_norm.backward(p, g, &cache.out_norm, &da);

        let mut dskips = Vec::new();
        for (level, (caches, pre)) in self.up.iter().zip(&cache.up).rev() {
            if let (Some(conv), Some(pre)) = (&level.resample, pre) {
                let dup = conv.backward(p, g, &pre.upsample2(), &dh);
                dh = dup.upsample2_backward();
            }
            for (stage, (c, split)) in level.stages.iter().zip(caches).rev() {
                let dcat = stage.backward(p, g, c, &cache.temb_act, dh, &mut dtemb);
                let (dprev, dskip) = dcat.split_channels(*split);
                dskips.push(dskip);
                dh = dprev;
            }
        }

        for (stage, c) in self.mid.iter().zip(&cache.mid).rev() {
            dh = stage.backward(p, g, c, &cache.temb_act, dh, &mut dtemb);
        }

        // dskips runs from the first down stage to the last; the down pass below walks backwards.
        let mut dskips = dskips.into_iter().rev();
        for (level, (caches, pre)) in self.down.iter().zip(&cache.down).rev() {
            if let (Some(conv), Some(pre)) = (&level.resample, pre) {
                dh = conv.backward(p, g, pre, &dh);
            }
            for (stage, c) in level.stages.iter().zip(caches).rev() {
                dh.add_assign(&dskips.next().expect("skip gradient per down stage"));
                dh = stage.backward(p, g, c, &cache.temb_act, dh, &mut dtemb);
            }
        }
        self.conv_in.backward(p, g, &cache.input, &dh);

        let dtemb = silu_backward(&cache.temb, &dtemb);
        let ds1 = self.time2.backward(p, g, &silu(&cache.t1), &dtemb);
        let dt1 = silu_backward(&cache.t1, &ds1);
        self.time1.backward(p, g, &cache.temb_in, &dt1);
    }
}
