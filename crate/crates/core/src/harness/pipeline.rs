//! Implementations of the CLI stages. Each stage reads and writes files in
//! a corpus directory so a full run is a sequence of commands.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint;
use super::container::FeatureContainer;
use super::io::{
    read_json, read_jsonl, write_json, write_jsonl, AlignmentRecord, AnnotationRecord, CaptionLine,
    PoolLine, ProposalLine, ReferenceRecord, Split, SplitRecord,
};
use crate::attention::TraceRecord;
use crate::captioner::{
    self, CaptionModel, ModelConfig, TrainConfig, TrainingExample, Variant, VideoInput,
};
use crate::decoder::{beam_search, ground, BeamConfig, StopList};
use crate::error::{Error, Result};
use crate::lang::{tokenize, Vocabulary};
use crate::metrics::{bleu, EvalPair};
use crate::proposals::{
    filter_pool, score_proposal, select_and_pad, BoundingBox, Detection, FilterConfig,
    ProposalFeatureSet, ProposalRecord, ScoredProposal,
};
use crate::semantics::{
    assemble_semantic, default_lambda_grid, mine_svo_vocabulary, most_common_label,
    pool_cls_scores, pool_det_scores, train_one_vs_all, KernelSpec, SemanticSubset, SvoPart,
    SvoTriplet, SvoVocabulary,
};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SVO_VOCAB_FILE: &str = "svo_vocab.json";
pub const SVO_SCORES_FILE: &str = "svo_scores.gcap";
pub const POOL_FILE: &str = "pool.gcap";
pub const POOL_INDEX_FILE: &str = "pool.jsonl";
pub const DEFAULT_DET_WINDOW: usize = 25;

fn splits(data: &Path) -> Result<Vec<SplitRecord>> {
    read_jsonl(&data.join("split.jsonl"))
}

fn videos_in(data: &Path, split: Split) -> Result<Vec<String>> {
    Ok(splits(data)?
        .into_iter()
        .filter(|s| s.split == split)
        .map(|s| s.video_id)
        .collect())
}

fn references(data: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let refs: Vec<ReferenceRecord> = read_jsonl(&data.join("references.jsonl"))?;
    Ok(refs
        .into_iter()
        .map(|r| (r.video_id, r.sentences))
        .collect())
}

fn annotations(data: &Path) -> Result<BTreeMap<String, Vec<SvoTriplet>>> {
    let notes: Vec<AnnotationRecord> = read_jsonl(&data.join("annotations.jsonl"))?;
    let mut out: BTreeMap<String, Vec<SvoTriplet>> = BTreeMap::new();
    for n in notes {
        let t = SvoTriplet::new(n.subject.as_deref(), n.verb.as_deref(), n.object.as_deref())?;
        out.entry(n.video_id).or_default().push(t);
    }
    Ok(out)
}

/// Raw proposal records per video, descriptors attached.
fn raw_proposals(data: &Path) -> Result<BTreeMap<String, Vec<ProposalRecord>>> {
    let lines: Vec<ProposalLine> = read_jsonl(&data.join("proposals.jsonl"))?;
    let desc = FeatureContainer::read_file(&data.join("descriptors.gcap"))?;
    let mut out: BTreeMap<String, Vec<ProposalRecord>> = BTreeMap::new();
    for l in lines {
        let rows = desc.tensor_rows(&l.video_id)?;
        let row = rows.get(l.descriptor_offset).ok_or_else(|| {
            Error::format(format!(
                "proposal {} of {}: descriptor row {} missing",
                l.id, l.video_id, l.descriptor_offset
            ))
        })?;
        out.entry(l.video_id.clone())
            .or_default()
            .push(l.to_record(row.to_vec()));
    }
    Ok(out)
}

fn per_frame_detections(
    c: &FeatureContainer,
    video: &str,
    frames: usize,
) -> Result<Vec<Vec<Detection>>> {
    if c.cols() != 7 {
        return Err(Error::format("detection container must have 7 columns"));
    }
    let mut out = vec![Vec::new(); frames];
    for r in c.tensor_rows(video)? {
        let frame = r[0] as usize;
        let slot = out.get_mut(frame).ok_or_else(|| {
            Error::format(format!(
                "{video}: detection on frame {frame} past the video end"
            ))
        })?;
        slot.push(Detection {
            bbox: BoundingBox::new(
                f64::from(r[3]),
                f64::from(r[4]),
                f64::from(r[5]),
                f64::from(r[6]),
            ),
            class: r[1] as usize,
            score: f64::from(r[2]),
        });
    }
    Ok(out)
}

/// Caption vocabulary from training references and the mined concept
/// vocabulary from training annotations.
pub fn mine_vocab(data: &Path) -> Result<String> {
    let train = videos_in(data, Split::Train)?;
    let refs = references(data)?;
    let mut sentences = Vec::new();
    for v in &train {
        sentences.extend(refs.get(v).into_iter().flatten().cloned());
    }
    let vocab = Vocabulary::build(&sentences)?;
    vocab.write_to(std::fs::File::create(data.join(VOCAB_FILE))?)?;
    let notes = annotations(data)?;
    let grouped: Vec<Vec<SvoTriplet>> =
        train.iter().filter_map(|v| notes.get(v).cloned()).collect();
    let svo = mine_svo_vocabulary(&grouped)?;
    write_json(&data.join(SVO_VOCAB_FILE), &svo)?;
    Ok(format!(
        "vocabulary: {} tokens; concepts: {} subjects, {} verbs, {} objects",
        vocab.len(),
        svo.subjects.len(),
        svo.verbs.len(),
        svo.objects.len()
    ))
}

fn video_descriptor(props: &[ProposalRecord]) -> Vec<f64> {
    let dim = props.first().map_or(0, |p| p.descriptor.len());
    let mut acc = vec![0.0; dim];
    for p in props {
        for (a, &v) in acc.iter_mut().zip(&p.descriptor) {
            *a += f64::from(v);
        }
    }
    let n = props.len().max(1) as f64;
    acc.into_iter().map(|a| a / n).collect()
}

/// Trains one-vs-all concept classifiers on the mean proposal descriptor of
/// each training video and writes concept responses for every video.
/// Training videos receive their leave-one-out responses.
pub fn svo_train(data: &Path, grid: Option<Vec<f64>>, with_bias: bool) -> Result<String> {
    let svo: SvoVocabulary = read_json(&data.join(SVO_VOCAB_FILE))?;
    if svo.width() == 0 {
        return Err(Error::invalid("concept vocabulary is empty"));
    }
    let notes = annotations(data)?;
    let props = raw_proposals(data)?;
    let all = splits(data)?;
    let feature = |v: &str| -> Result<Vec<f64>> {
        props
            .get(v)
            .map(|p| video_descriptor(p))
            .ok_or_else(|| Error::format(format!("no proposals for video {v}")))
    };
    let train: Vec<&SplitRecord> = all.iter().filter(|s| s.split == Split::Train).collect();
    let x: Vec<Vec<f64>> = train
        .iter()
        .map(|s| feature(&s.video_id))
        .collect::<Result<_>>()?;
    let ys: Vec<Vec<f64>> = train
        .iter()
        .map(|s| svo.labels(notes.get(&s.video_id).map_or(&[][..], Vec::as_slice)))
        .collect();
    let labels: Vec<Vec<f64>> = (0..svo.width())
        .map(|c| ys.iter().map(|y| y[c]).collect())
        .collect();
    let kernel = KernelSpec::Linear;
    let gram = kernel.gram(&x);
    let grid = grid.unwrap_or_else(default_lambda_grid);
    let models = train_one_vs_all(&gram, &labels, &grid, with_bias)?;
    let loo: Vec<Vec<f64>> = models.iter().map(|m| m.loo()).collect::<Result<_>>()?;

    let mut out = FeatureContainer::new(svo.width());
    let mut hits = [0usize; 3];
    let mut tested = 0usize;
    let mut train_pos = 0usize;
    for s in &all {
        let responses: Vec<f64> = if s.split == Split::Train {
            let r = loo.iter().map(|l| l[train_pos]).collect();
            train_pos += 1;
            r
        } else {
            let k = kernel.against(&x, &feature(&s.video_id)?);
            models
                .iter()
                .map(|m| m.predict(&k))
                .collect::<Result<_>>()?
        };
        if s.split == Split::Test {
            tested += 1;
            let decoded = svo.decode(&responses);
            let human = notes.get(&s.video_id).map_or(&[][..], Vec::as_slice);
            for (slot, part) in SvoPart::ALL.into_iter().enumerate() {
                let labels: Vec<Option<&str>> = human.iter().map(|t| t.part(part)).collect();
                if decoded[slot].is_some() && decoded[slot] == most_common_label(&labels) {
                    hits[slot] += 1;
                }
            }
        }
        let row: Vec<f32> = responses.iter().map(|&v| v as f32).collect();
        out.push(&s.video_id, 1, &row)?;
    }
    out.write_file(&data.join(SVO_SCORES_FILE))?;
    let pct = |h: usize| {
        if tested == 0 {
            0.0
        } else {
            100.0 * h as f64 / tested as f64
        }
    };
    Ok(format!(
        "concept classifiers: {} outputs; test accuracy subject {:.1}% verb {:.1}% object {:.1}%",
        svo.width(),
        pct(hits[0]),
        pct(hits[1]),
        pct(hits[2])
    ))
}

/// Scores, filters and selects the top `m` proposals of every video.
pub fn score_proposals(data: &Path, m: usize, cfg: &FilterConfig) -> Result<String> {
    let props = raw_proposals(data)?;
    let cls = FeatureContainer::read_file(&data.join("frame_cls.gcap"))?;
    let dets = FeatureContainer::read_file(&data.join("detections.gcap"))?;
    let all = splits(data)?;
    let results: Vec<(PoolLine, Vec<f32>, usize)> = all
        .par_iter()
        .map(|s| {
            let v = &s.video_id;
            let frame_cls = cls.tensor_rows(v)?;
            let frame_dets = per_frame_detections(&dets, v, frame_cls.len())?;
            let pool = props
                .get(v)
                .ok_or_else(|| Error::format(format!("no proposals for video {v}")))?;
            let scored: Vec<ScoredProposal> = pool
                .iter()
                .map(|p| {
                    Ok(ScoredProposal {
                        record: p.clone(),
                        score: score_proposal(p, &frame_cls, &frame_dets)
                            .map_err(|e| Error::invalid(format!("{v}: {e}")))?,
                    })
                })
                .collect::<Result<_>>()?;
            let kept = filter_pool(&scored, cfg);
            if kept.is_empty() {
                return Err(Error::invalid(format!(
                    "{v}: no proposal survives filtering"
                )));
            }
            let set = select_and_pad::<f32>(&kept, m)?;
            Ok((
                PoolLine {
                    video_id: v.clone(),
                    source_ids: set.source_ids().to_vec(),
                    valid: set.valid_count(),
                },
                set.features().data().to_vec(),
                pool.len(),
            ))
        })
        .collect::<Result<_>>()?;
    let dim = props
        .values()
        .next()
        .and_then(|p| p.first())
        .map_or(0, |p| p.descriptor.len());
    let mut out = FeatureContainer::new(dim);
    let mut lines = Vec::with_capacity(results.len());
    let (mut raw, mut valid) = (0usize, 0usize);
    for (line, values, n) in results {
        out.push(&line.video_id, m, &values)?;
        raw += n;
        valid += line.valid;
        lines.push(line);
    }
    out.write_file(&data.join(POOL_FILE))?;
    write_jsonl(&data.join(POOL_INDEX_FILE), &lines)?;
    Ok(format!(
        "pools: {} videos, {raw} raw proposals, {valid} selected (m = {m})",
        lines.len()
    ))
}

fn pools(data: &Path) -> Result<(FeatureContainer, BTreeMap<String, PoolLine>)> {
    let c = FeatureContainer::read_file(&data.join(POOL_FILE))?;
    let lines: Vec<PoolLine> = read_jsonl(&data.join(POOL_INDEX_FILE))?;
    Ok((
        c,
        lines.into_iter().map(|l| (l.video_id.clone(), l)).collect(),
    ))
}

/// Semantic vector of one video for the active blocks.
pub fn semantic_vector(
    data: &SemanticSources,
    video: &str,
    subset: SemanticSubset,
) -> Result<Vec<f64>> {
    let svo = if subset.svo {
        let c = data
            .svo
            .as_ref()
            .ok_or_else(|| Error::invalid("svo block requested but svo-train has not been run"))?;
        Some(
            c.tensor(video)?
                .iter()
                .map(|&v| f64::from(v))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let cls = if subset.cls {
        Some(pool_cls_scores(&data.cls.tensor_rows(video)?)?)
    } else {
        None
    };
    let det = if subset.det {
        Some(pool_det_scores(
            &data.det.tensor_rows(video)?,
            data.det_window,
        )?)
    } else {
        None
    };
    Ok(
        assemble_semantic(svo.as_deref(), cls.as_deref(), det.as_deref(), subset)?
            .values()
            .to_vec(),
    )
}

pub struct SemanticSources {
    pub svo: Option<FeatureContainer>,
    pub cls: FeatureContainer,
    pub det: FeatureContainer,
    pub det_window: usize,
}

impl SemanticSources {
    pub fn load(data: &Path, det_window: usize) -> Result<Self> {
        let svo_path = data.join(SVO_SCORES_FILE);
        Ok(Self {
            svo: svo_path
                .exists()
                .then(|| FeatureContainer::read_file(&svo_path))
                .transpose()?,
            cls: FeatureContainer::read_file(&data.join("frame_cls.gcap"))?,
            det: FeatureContainer::read_file(&data.join("frame_det.gcap"))?,
            det_window,
        })
    }
}

/// Encoder inputs of every video in the pool index.
pub fn load_inputs(
    data: &Path,
    subset: SemanticSubset,
    det_window: usize,
) -> Result<BTreeMap<String, VideoInput<f32>>> {
    let (c, lines) = pools(data)?;
    let sources = if subset.is_empty() {
        None
    } else {
        Some(SemanticSources::load(data, det_window)?)
    };
    let mut out = BTreeMap::new();
    for (v, line) in lines {
        let e = c
            .entry(&v)
            .ok_or_else(|| Error::format(format!("pool container has no tensor for {v}")))?;
        let features = crate::tensor::Matrix::new(e.rows, c.cols(), c.tensor(&v)?.to_vec())?;
        let features = ProposalFeatureSet::new(features, line.valid, line.source_ids.clone())?;
        let semantic = match &sources {
            Some(s) => Some(
                semantic_vector(s, &v, subset)?
                    .into_iter()
                    .map(|x| x as f32)
                    .collect(),
            ),
            None => None,
        };
        out.insert(v, VideoInput { features, semantic });
    }
    Ok(out)
}

fn examples(
    ids: &[String],
    refs: &BTreeMap<String, Vec<String>>,
    inputs: &BTreeMap<String, VideoInput<f32>>,
    vocab: &Vocabulary,
) -> Result<Vec<TrainingExample<f32>>> {
    let mut out = Vec::new();
    for v in ids {
        let input = inputs.get(v).ok_or_else(|| {
            Error::invalid(format!(
                "video {v} has no proposal pool; run score-proposals"
            ))
        })?;
        for s in refs.get(v).into_iter().flatten() {
            out.push(TrainingExample {
                video_id: v.clone(),
                input: input.clone(),
                target: vocab.encode(s),
            });
        }
    }
    Ok(out)
}

pub fn load_vocab(data: &Path) -> Result<Vocabulary> {
    let path = data.join(VOCAB_FILE);
    let f = std::fs::File::open(&path)
        .map_err(|e| Error::invalid(format!("{}: {e} (run mine-vocab)", path.display())))?;
    Vocabulary::read_from(std::io::BufReader::new(f))
}

pub struct TrainRequest {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub det_window: usize,
}

impl TrainRequest {
    pub fn new(data: &Path, out: &Path, variant: Variant, subset: SemanticSubset) -> Self {
        let mut model = ModelConfig::new(variant, 1);
        model.semantic = subset;
        Self {
            data: data.to_path_buf(),
            out: out.to_path_buf(),
            model,
            train: TrainConfig::default(),
            det_window: DEFAULT_DET_WINDOW,
        }
    }
}

/// Trains a caption model on the training split, selects on validation and
/// writes `model.gcap`, `model.json` and `train_log.csv` into `out`.
pub fn train(req: &TrainRequest) -> Result<String> {
    let vocab = load_vocab(&req.data)?;
    let refs = references(&req.data)?;
    let inputs = load_inputs(&req.data, req.model.semantic, req.det_window)?;
    let first = inputs
        .values()
        .next()
        .ok_or_else(|| Error::invalid("no proposal pools found"))?;
    let mut cfg = req.model.clone();
    cfg.feature_dim = first.features.dim();
    cfg.semantic_width = first.semantic.as_ref().map_or(0, Vec::len);
    let train_ids = videos_in(&req.data, Split::Train)?;
    let val_ids = videos_in(&req.data, Split::Val)?;
    let train_set = examples(&train_ids, &refs, &inputs, &vocab)?;
    let val_set = examples(&val_ids, &refs, &inputs, &vocab)?;
    let model = CaptionModel::<f32>::build(&cfg, vocab.len())?;
    let outcome = captioner::train(model, &train_set, &val_set, &req.train)?;
    std::fs::create_dir_all(&req.out)?;
    let (epoch, best) = outcome.selected(req.train.select_by);
    checkpoint::save(best, &req.out.join("model.gcap"))?;
    std::fs::write(
        req.out.join("train_log.csv"),
        captioner::train::log_csv(&outcome.log),
    )?;
    let last = outcome.log.last().expect("training ran at least one epoch");
    Ok(format!(
        "trained {:?} for {} epochs ({} steps); final train loss {:.4}; selected epoch {epoch}",
        cfg.variant,
        outcome.log.len(),
        outcome.steps,
        last.train_loss
    ))
}

pub struct GenerateRequest {
    pub data: PathBuf,
    pub model: PathBuf,
    pub split: Split,
    pub beam: BeamConfig,
    pub out: PathBuf,
    pub stoplist: StopList,
    pub det_window: usize,
}

/// Decodes every video of a split, writing captions with grounding to
/// `out` and per-word attention traces next to it.
pub fn generate(req: &GenerateRequest) -> Result<String> {
    let model = checkpoint::load(&req.model)?;
    let vocab = load_vocab(&req.data)?;
    if vocab.len() != model.vocab_size() {
        return Err(Error::invalid(format!(
            "model vocabulary has {} entries, corpus vocabulary {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    let inputs = load_inputs(&req.data, model.config.semantic, req.det_window)?;
    let props = raw_proposals(&req.data)?;
    let ids = videos_in(&req.data, req.split)?;
    let rows: Vec<(CaptionLine, Vec<TraceRecord>)> = ids
        .par_iter()
        .map(|v| {
            let input = inputs
                .get(v)
                .ok_or_else(|| Error::invalid(format!("video {v} has no pool")))?;
            let out = beam_search(&model, input, &req.beam)?;
            let words: Vec<&str> = out
                .tokens
                .iter()
                .map(|&t| {
                    vocab
                        .word(t)
                        .ok_or_else(|| Error::invalid(format!("token {t} out of range")))
                })
                .collect::<Result<_>>()?;
            let pool = props.get(v).map_or(&[][..], Vec::as_slice);
            let grounding = ground(
                &words,
                &out.trace,
                input.features.source_ids(),
                pool,
                &req.stoplist,
            )?;
            let traces = words
                .iter()
                .zip(&out.trace)
                .enumerate()
                .map(|(t, (w, step))| {
                    let mut r = TraceRecord::new(w, t, step);
                    r.video_id = Some(v.clone());
                    r
                })
                .collect();
            Ok((
                CaptionLine {
                    video_id: v.clone(),
                    sentence: words.join(" "),
                    log_prob: out.log_prob,
                    grounding,
                },
                traces,
            ))
        })
        .collect::<Result<_>>()?;
    let (captions, traces): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    write_jsonl(&req.out, &captions)?;
    let traces: Vec<TraceRecord> = traces.into_iter().flatten().collect();
    write_jsonl(&req.out.with_extension("trace.jsonl"), &traces)?;
    Ok(format!("generated {} captions", captions.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroundingScore {
    pub correct: usize,
    pub total: usize,
}

impl GroundingScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Fraction of generated subject and object words whose grounded proposal
/// is the planted one. Only occurrences of the video's true subject and
/// object words are counted.
pub fn grounding_accuracy(
    captions: &[CaptionLine],
    alignment: &[AlignmentRecord],
) -> GroundingScore {
    let truth: HashMap<&str, &AlignmentRecord> =
        alignment.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let mut score = GroundingScore::default();
    for c in captions {
        let Some(a) = truth.get(c.video_id.as_str()) else {
            continue;
        };
        for g in &c.grounding {
            let planted = if g.word == a.subject {
                a.subject_proposal
            } else if g.word == a.object {
                a.object_proposal
            } else {
                continue;
            };
            score.total += 1;
            if g.proposal_id == planted {
                score.correct += 1;
            }
        }
    }
    score
}

pub fn ground_report(data: &Path, captions: &Path, with_alignment: bool) -> Result<String> {
    let lines: Vec<CaptionLine> = read_jsonl(captions)?;
    let mut out = String::new();
    if with_alignment {
        let align: Vec<AlignmentRecord> = read_jsonl(&data.join("alignment.jsonl"))?;
        let s = grounding_accuracy(&lines, &align);
        let _ = writeln!(
            out,
            "grounding accuracy: {:.2}% ({}/{} subject/object words)",
            100.0 * s.accuracy(),
            s.correct,
            s.total
        );
    } else {
        for c in &lines {
            let _ = writeln!(out, "{}: {}", c.video_id, c.sentence);
            for g in &c.grounding {
                let _ = writeln!(
                    out,
                    "  {:<12} t={:<2} proposal {:<4} beta {:.3} frames {}..={}",
                    g.word, g.t, g.proposal_id, g.beta, g.first_frame, g.last_frame
                );
            }
        }
    }
    Ok(out.trim_end().to_string())
}

/// Position-wise agreement between a candidate and one reference, over the
/// longer of the two.
pub fn token_matches(candidate: &[&str], reference: &[&str]) -> (usize, usize) {
    let hits = candidate
        .iter()
        .zip(reference)
        .filter(|(a, b)| a == b)
        .count();
    (hits, candidate.len().max(reference.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu: Vec<f64>,
    pub token_accuracy: f64,
    pub videos: usize,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let b: Vec<String> = self
            .bleu
            .iter()
            .map(|v| format!("{:.2}", 100.0 * v))
            .collect();
        format!(
            "bleu1,bleu2,bleu3,bleu4,meteor,token_accuracy\n{},n/a,{:.2}\n",
            b.join(","),
            100.0 * self.token_accuracy
        )
    }
}

/// Corpus BLEU@1-4 of captions against references, plus token accuracy
/// against the best-matching reference of each video.
pub fn evaluate(captions: &Path, references_path: &Path) -> Result<EvalReport> {
    let lines: Vec<CaptionLine> = read_jsonl(captions)?;
    let refs: Vec<ReferenceRecord> = read_jsonl(references_path)?;
    let refs: HashMap<&str, &Vec<String>> = refs
        .iter()
        .map(|r| (r.video_id.as_str(), &r.sentences))
        .collect();
    if lines.is_empty() {
        return Err(Error::invalid("no captions to evaluate"));
    }
    let mut pairs = Vec::with_capacity(lines.len());
    let (mut hits, mut total) = (0usize, 0usize);
    for c in &lines {
        let r = refs
            .get(c.video_id.as_str())
            .ok_or_else(|| Error::invalid(format!("no references for {}", c.video_id)))?;
        let cand: Vec<&str> = tokenize(&c.sentence).collect();
        let best = r
            .iter()
            .map(|s| token_matches(&cand, &tokenize(s).collect::<Vec<_>>()))
            .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
            .ok_or_else(|| Error::invalid(format!("no references for {}", c.video_id)))?;
        hits += best.0;
        total += best.1;
        pairs.push(EvalPair::from_text(
            &c.sentence,
            &r.iter().map(String::as_str).collect::<Vec<_>>(),
        )?);
    }
    Ok(EvalReport {
        bleu: bleu(&pairs, 4)?,
        token_accuracy: if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        },
        videos: lines.len(),
    })
}
