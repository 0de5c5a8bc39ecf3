use e2rank::encoder::{Encoder, EncoderParams};
use e2rank::reranker::{evaluate_pipeline, PrfConfig};
use e2rank::trainer::{
    self, generate_synthetic, train_stage1, train_stage2, StageConfig, SyntheticCorpusSpec,
};

const LR: f64 = 0.02;

fn stage1_cfg(epochs: usize, template: e2rank::PromptTemplate) -> StageConfig {
    StageConfig {
        learning_rate: LR,
        epochs,
        seed: 1,
        template,
        ..StageConfig::stage1()
    }
}

#[test]
fn stage1_generalizes_to_heldout_queries() {
    let data = generate_synthetic(&SyntheticCorpusSpec::default()).unwrap();
    let init = EncoderParams::init(8192, 64, 7);
    // 800 instances at batch 512: two steps per epoch.
    let cfg = stage1_cfg(100, data.template());
    let before = trainer::evaluate(&data.heldout_stage1, &cfg, &init)
        .unwrap()
        .infonce;
    let out = train_stage1(&data.stage1, &cfg, init).unwrap();
    assert_eq!(out.curve.len(), 200);
    let after = trainer::evaluate(&data.heldout_stage1, &cfg, &out.params)
        .unwrap()
        .infonce;
    assert!(
        after <= 0.8 * before,
        "held-out InfoNCE {before} -> {after}"
    );

    assert!(out
        .curve
        .iter()
        .all(|v| v.infonce.is_finite() && v.combined.is_finite()));
    let first: f64 = out.curve[..10].iter().map(|v| v.combined).sum::<f64>() / 10.0;
    let last: f64 = out.curve[190..].iter().map(|v| v.combined).sum::<f64>() / 10.0;
    assert!(last < first, "first-10 mean {first}, last-10 mean {last}");
}

#[test]
fn stage2_rerank_beats_retrieval() {
    let data = generate_synthetic(&SyntheticCorpusSpec::default()).unwrap();
    let init = EncoderParams::init(8192, 64, 7);
    let s1 = train_stage1(&data.stage1, &stage1_cfg(20, data.template()), init).unwrap();
    let s2cfg = StageConfig {
        learning_rate: LR,
        epochs: 20,
        seed: 2,
        template: data.template(),
        ..StageConfig::stage2()
    };
    let s2 = train_stage2(&data.stage2, &s2cfg, s1.params).unwrap();
    let prf = PrfConfig {
        template: data.template(),
        ..PrfConfig::default()
    };
    let scores = evaluate_pipeline(
        &Encoder::new(s2.params),
        &data.corpus,
        &data.heldout_queries,
        &data.qrels,
        &data.instruction,
        100,
        &prf,
        10,
    )
    .unwrap();
    assert!(scores.rerank > scores.retrieval, "{scores:?}");
}
