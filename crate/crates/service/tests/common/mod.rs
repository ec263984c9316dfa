#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use qac_core::corpus::{build_splits, synth_corpus, CategoryLexicon, SplitSpec, SynthConfig};
use qac_core::model::{SinConfig, SinModel, Variant};
use qac_core::train::{Dataset, DatasetConfig};
use qac_service::{ServiceConfig, SessionStore, Snapshot, SuggestService};

pub struct Fixture {
    pub dataset: Dataset,
    pub lexicon: CategoryLexicon,
    pub model: SinModel,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SynthConfig {
            users: 40,
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&cfg, 3).unwrap();
        let end = cfg.start_ms + cfg.span_days as i64 * 86_400_000 + 1;
        let spec = SplitSpec::proportional(cfg.start_ms, end, [0.3, 0.5, 0.1, 0.1]);
        let splits = build_splits(corpus.records, &spec).unwrap();
        let dataset = Dataset::build(&splits, DatasetConfig::default()).unwrap();
        let model = SinModel::new(Variant::Full, SinConfig::small(), dataset.vocab.clone(), 11).unwrap();
        Fixture {
            dataset,
            lexicon: cfg.taxonomy.lexicon().unwrap(),
            model,
        }
    })
}

pub fn snapshot(f: &Fixture) -> Snapshot {
    Snapshot {
        matcher: f.dataset.matcher.clone(),
        model: f.model.clone(),
        lexicon: Some(f.lexicon.clone()),
    }
}

/// A service with the fixture installed; call inside a runtime.
pub fn service(config: ServiceConfig) -> Arc<SuggestService> {
    let f = fixture();
    let svc = SuggestService::new(config, SessionStore::new(f.model.config.views.clone()));
    svc.install(snapshot(f)).unwrap();
    Arc::new(svc)
}
