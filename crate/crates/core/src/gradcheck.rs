//! Finite-difference checks of every trainable path on tiny instances.

use hiersumm_tensor::gradcheck::{check_params, CheckOptions, GroupError};
use hiersumm_tensor::{GradBuffer, ParamStore};

use crate::encoder::{EncoderConfig, GraphSlot};
use crate::error::Result;
use crate::graphs::{GraphKind, ParaGraph};
use crate::model::{Example, Model, ModelConfig};
use crate::nn::Ctx;
use crate::ranker::{Ranker, RankerConfig};
use crate::text::Instance;

/// One checked component and its per-parameter errors.
#[derive(Clone, Debug)]
pub struct Report {
    pub component: String,
    pub groups: Vec<GroupError>,
}

impl Report {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

fn analytic(store: &ParamStore, f: impl Fn(&mut Ctx) -> Result<hiersumm_tensor::Var>) -> Result<GradBuffer> {
    let mut cx = Ctx::grad(store);
    let l = f(&mut cx)?;
    let g = cx.g.backward(l)?;
    let mut buf = GradBuffer::new(store);
    cx.g.accumulate_param_grads(&g, &mut buf, 1.0);
    Ok(buf)
}

fn loss_value(store: &ParamStore, f: &impl Fn(&mut Ctx) -> Result<hiersumm_tensor::Var>) -> f64 {
    let mut cx = Ctx::eval(store);
    let l = f(&mut cx).expect("loss evaluates at perturbed parameters");
    cx.g.value(l).item()
}

fn run(
    component: &str,
    mut store: ParamStore,
    opts: CheckOptions,
    f: impl Fn(&mut Ctx) -> Result<hiersumm_tensor::Var>,
) -> Result<Report> {
    let a = analytic(&store, &f)?;
    let groups = check_params(&mut store, &a, opts, |s| loss_value(s, &f));
    Ok(Report {
        component: component.to_string(),
        groups,
    })
}

/// A d = 8 encoder-decoder with every optional path switched on.
pub fn tiny_model_config(graph: GraphSlot) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            vocab: 24,
            d: 8,
            d_ff: 12,
            n_head: 2,
            n_local: 1,
            n_global: 1,
            lprime: 3,
            total_tokens: 12,
            use_paragraph_pos: true,
            pool_heads: Some(2),
            use_global_layers: true,
            graph,
            normalized_pooling: true,
            scale_inter_attention: false,
        },
        dec_layers: 1,
        max_target: 10,
        seed: 5,
    }
}

pub fn tiny_example(with_graph: bool) -> Example {
    let graph = with_graph.then(|| {
        ParaGraph::new(
            GraphKind::Similarity,
            3,
            vec![1.0, 0.5, 0.0, 0.5, 1.0, 0.25, 0.0, 0.25, 1.0],
        )
        .expect("valid graph")
    });
    Example {
        title: vec![5, 6],
        paragraphs: vec![vec![7, 8, 9, 10], vec![11, 12, 13], vec![14, 7, 15, 16, 17]],
        target: vec![8, 12, 18, 19],
        graph,
    }
}

/// Ranker BCE, encoder-decoder NLL with smoothing, and the same with a graph
/// head and with unnormalised pooling and scaled inter-paragraph attention.
pub fn gradient_suite(opts: CheckOptions) -> Result<Vec<Report>> {
    let mut reports = Vec::new();

    let rc = RankerConfig {
        vocab: 24,
        d_emb: 4,
        hidden: 3,
        seed: 3,
        ..RankerConfig::default()
    };
    let mut store = ParamStore::new();
    let ranker = Ranker::new(rc, &mut store);
    let inst = Instance {
        title: vec![5, 6, 7],
        paragraphs: vec![vec![7, 8, 9], vec![10, 11], vec![5, 12, 13, 14]],
        target: vec![8, 9, 12],
        selection: None,
    };
    let labels = [0.5, 0.0, 1.0 / 3.0];
    reports.push(run("ranker", store, opts, |cx| ranker.loss(cx, &inst, &labels))?);

    let variants: [(&str, GraphSlot, bool, bool); 3] = [
        ("encoder-decoder", GraphSlot::None, true, false),
        ("encoder-decoder+graph", GraphSlot::Similarity, true, false),
        ("encoder-decoder+unnormalised", GraphSlot::None, false, true),
    ];
    for (name, slot, normalized, scaled) in variants {
        let mut cfg = tiny_model_config(slot);
        cfg.encoder.normalized_pooling = normalized;
        cfg.encoder.scale_inter_attention = scaled;
        let mut store = ParamStore::new();
        let model = Model::new(cfg, &mut store)?;
        let ex = tiny_example(slot != GraphSlot::None);
        reports.push(run(name, store, opts, |cx| model.loss(cx, &ex, 0.1))?);
    }
    Ok(reports)
}
