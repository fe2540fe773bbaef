use std::fs;
use std::path::Path;

use lmvc_core::decode::{convert as convert_pair, Models};
use lmvc_core::eval::{ablate_fusion, eval_pairs, evaluate, AblationSetup, SpeakerClassifier};
use lmvc_core::masks::{causal_mask, full_mask, window_mask};
use lmvc_core::model::{load_checkpoint, save_checkpoint, train as train_model, TrainData};
use lmvc_core::synth::{gen_corpus as write_new_corpus, load_corpus, Split};
use lmvc_core::tokens::{read_tokens, write_tokens};
use lmvc_core::{mplm_mask, Error, LmModel, ModelKind, Result};

use crate::run::{load_model_at, Run};
use crate::Common;

pub fn gen_corpus(common: &Common) -> Result<()> {
    let run = Run::open(common, "gen-corpus")?;
    let dir = run.corpus_dir();
    let corpus = write_new_corpus(&run.config.corpus, &dir)?;
    let count = |s| corpus.split(s).count();
    let summary = format!(
        "corpus\t{}\nutterances\t{}\ntrain\t{}\nvalid\t{}\ntest\t{}\n",
        dir.display(),
        corpus.items.len(),
        count(Split::Train),
        count(Split::Valid),
        count(Split::Test)
    );
    fs::write(run.dir.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn train(common: &Common, kind: ModelKind, resume: bool) -> Result<()> {
    let run = Run::open(common, &format!("train-{}", kind.name()))?;
    let corpus = load_corpus(&run.corpus_dir())?;
    let cfg = run.config.train.get(kind).clone();
    let (mut model, optim) = if resume {
        let ck = load_checkpoint(&run.model_path(kind))?;
        if ck.model.kind() != kind {
            return Err(Error::Config(format!("stored checkpoint is a {} model", ck.model.kind().name())));
        }
        (ck.model, ck.optim)
    } else {
        let m = LmModel::new(kind, run.config.model.get(kind).clone(), corpus.vocab().clone(), cfg.seed)?;
        (m, None)
    };
    let data = TrainData::from_corpus(&corpus);
    let summary = train_model(&mut model, &data, &cfg, Some(&run.dir), optim)?;
    fs::create_dir_all(run.models_dir())?;
    save_checkpoint(&run.model_path(kind), &model, Some(&summary.optim))?;
    let last = summary.train_losses().last().copied().unwrap_or(f64::NAN);
    println!("model\t{}", run.model_path(kind).display());
    println!("steps\t{}", summary.optim.step);
    println!("train_loss\t{last:.6}");
    if let Some(v) = summary.last_valid() {
        println!("valid_loss\t{:.6}", v.total);
    }
    println!("fingerprint\t{}", model.fingerprint());
    Ok(())
}

fn load_elm(run: &Run, elm: bool) -> Result<Option<LmModel>> {
    elm.then(|| run.load_model(ModelKind::Elm)).transpose()
}

pub fn convert(common: &Common, source: &Path, target: &Path, out: &Path, elm: bool) -> Result<()> {
    let run = Run::open(common, "convert")?;
    for p in [source, target] {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let (sv, src) = read_tokens(source)?;
    let (tv, tgt) = read_tokens(target)?;
    let mplm = run.load_model(ModelKind::Mplm)?;
    let plm = run.load_model(ModelKind::Plm)?;
    let elm = load_elm(&run, elm)?;
    let vocab = mplm.vocab().clone();
    if sv != vocab || tv != vocab {
        return Err(Error::Config("token files and models use different vocabularies".into()));
    }
    let models = Models { mplm: &mplm, elm: elm.as_ref(), plm: &plm };
    let c = convert_pair(&src, &tgt, &models, &run.config.sampling)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_tokens(out, &vocab, &c.to_pair(&vocab))?;
    let prov = format!("source\t{}\ntarget\t{}\n{}", source.display(), target.display(), c.provenance.to_text());
    let mut prov_path = out.as_os_str().to_owned();
    prov_path.push(".prov");
    fs::write(&prov_path, &prov)?;
    fs::write(run.dir.join("provenance.tsv"), &prov)?;
    println!("out\t{}\nframes\t{}\ntruncated\t{}", out.display(), c.grid.len(), c.provenance.truncated);
    Ok(())
}

pub fn eval(common: &Common, manifest: Option<&Path>, elm: bool) -> Result<()> {
    let run = Run::open(common, "eval")?;
    let corpus_dir = match manifest {
        Some(m) if !m.exists() => return Err(Error::MissingFile(m.to_path_buf())),
        Some(m) => m.parent().map(Path::to_path_buf).unwrap_or_default(),
        None => run.corpus_dir(),
    };
    let corpus = load_corpus(&corpus_dir)?;
    let mplm = run.load_model(ModelKind::Mplm)?;
    let plm = run.load_model(ModelKind::Plm)?;
    let elm = load_elm(&run, elm)?;
    let e = &run.config.eval;
    let clf = SpeakerClassifier::fit(corpus.split(Split::Train).map(|it| &it.pair), corpus.vocab().acoustic_vocab)?;
    let pairs = eval_pairs(&corpus, Split::Test, e.pairs, e.prompt_frames, e.max_source_frames, e.seed)?;
    let models = Models { mplm: &mplm, elm: elm.as_ref(), plm: &plm };
    let report = evaluate(&corpus.codec, &clf, &models, &pairs, &run.config.sampling, run.config.to_toml())?;
    fs::write(run.dir.join("report.tsv"), report.summary_tsv())?;
    fs::write(run.dir.join("pairs.tsv"), report.pairs_tsv())?;
    print!("{}", report.summary_tsv());
    Ok(())
}

pub fn ablate(common: &Common) -> Result<()> {
    let run = Run::open(common, "ablate")?;
    let corpus = load_corpus(&run.corpus_dir())?;
    let mplm = run.load_model(ModelKind::Mplm)?;
    let plm = run.load_model(ModelKind::Plm)?;
    let data = TrainData::from_corpus(&corpus);
    let cfg = &run.config;
    let mut elms = Vec::new();
    for &w in &cfg.ablate.windows {
        let path = run.models_dir().join(format!("elm-w{w}.ckpt"));
        let reusable = path.exists() && load_model_at(&path, ModelKind::Elm).is_ok_and(|m| m.config().window == w);
        let model = if reusable {
            load_model_at(&path, ModelKind::Elm)?
        } else {
            let mc = lmvc_core::ModelConfig { window: w, ..cfg.model.elm.clone() };
            let mut m = LmModel::new(ModelKind::Elm, mc, corpus.vocab().clone(), cfg.train.elm.seed)?;
            let s = train_model(&mut m, &data, &cfg.train.elm, Some(&run.dir.join(format!("elm-w{w}"))), None)?;
            fs::create_dir_all(run.models_dir())?;
            save_checkpoint(&path, &m, Some(&s.optim))?;
            m
        };
        elms.push((w, model));
    }
    let clf = SpeakerClassifier::fit(corpus.split(Split::Train).map(|it| &it.pair), corpus.vocab().acoustic_vocab)?;
    let e = &cfg.eval;
    let pairs = eval_pairs(&corpus, Split::Test, e.pairs, e.prompt_frames, e.max_source_frames, e.seed)?;
    let setup = AblationSetup {
        codec: &corpus.codec,
        classifier: &clf,
        mplm: &mplm,
        plm: &plm,
        pairs: &pairs,
        sampling: cfg.sampling.clone(),
    };
    let refs: Vec<(usize, &LmModel)> = elms.iter().map(|(w, m)| (*w, m)).collect();
    let table = ablate_fusion(&setup, &refs, &cfg.ablate.lambdas, &cfg.ablate.sampling_seeds)?;
    fs::write(run.dir.join("ablation.tsv"), table.to_tsv())?;
    fs::write(run.dir.join("ablation_plot.tsv"), table.plot_data())?;
    print!("{}", table.to_tsv());
    Ok(())
}

pub fn inspect_mask(kind: &str, dims: &[usize]) -> Result<()> {
    let need = |n: usize| {
        if dims.len() == n {
            Ok(())
        } else {
            Err(Error::Config(format!("{kind} mask takes {n} size argument(s), got {}", dims.len())))
        }
    };
    let positive = |v: usize| if v == 0 { Err(Error::Config("mask sizes must be positive".into())) } else { Ok(v) };
    let mask = match kind {
        "mplm" => {
            need(2)?;
            mplm_mask(positive(dims[0])?, dims[1])?
        }
        "elm" | "window" => {
            need(2)?;
            window_mask(positive(dims[0])?, positive(dims[1])?)
        }
        "causal" => {
            need(1)?;
            causal_mask(positive(dims[0])?)
        }
        "plm" | "full" => {
            need(1)?;
            full_mask(positive(dims[0])?)
        }
        other => return Err(Error::Config(format!("unknown mask kind {other:?}"))),
    };
    for line in mask.to_ascii() {
        println!("{line}");
    }
    Ok(())
}
