//! Regenerates the bundled fixture run under `fixtures/`: entity dump,
//! train/test questions, precomputed embeddings and a recorded language
//! model transcript.
//!
//! ```text
//! cargo run -p kat-cli --example make_fixtures [-- <dir>]
//! ```
//!
//! The language model is scripted: it knows each question's answer and
//! returns it first for about half the questions, later or not at all for
//! the rest. Embeddings are synthetic too; every entity gets a concept
//! vector and an image's regions mix its entity's vector with others.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use kat_cli::RunConfig;
use kat_core::eval::GOLD_COUNT;
use kat_core::implicit::{similarity_text, write_dataset, LmClient, LmError, QAExample, RecordingClient};
use kat_core::index::EmbeddingVector;
use kat_core::kb::{KnowledgeEntry, Subclass};
use kat_core::retriever::{generate_regions, region_key, text_key, write_embeddings, FileProvider};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ENTITIES: [(&str, &str, Subclass); 50] = [
    ("giraffe", "tall African mammal with a long neck", Subclass::Animal),
    ("zebra", "African equine with black and white stripes", Subclass::Animal),
    ("elephant", "large mammal with a trunk and tusks", Subclass::Animal),
    ("polar bear", "white bear of the Arctic sea ice", Subclass::Animal),
    ("penguin", "flightless seabird of the southern hemisphere", Subclass::Animal),
    ("golden retriever", "dog breed with a dense golden coat", Subclass::Animal),
    ("tabby cat", "domestic cat with a striped coat", Subclass::Animal),
    ("cow", "domesticated bovine raised for milk and meat", Subclass::Animal),
    ("double-decker bus", "bus with two passenger decks", Subclass::Vehicle),
    ("fire engine", "vehicle that carries firefighters and water pumps", Subclass::Vehicle),
    ("sailboat", "boat propelled by wind on its sails", Subclass::Vehicle),
    ("motorcycle", "two-wheeled motor vehicle", Subclass::Vehicle),
    ("steam locomotive", "railway engine powered by steam", Subclass::Vehicle),
    ("airliner", "large aircraft carrying passengers", Subclass::Vehicle),
    ("tandem bicycle", "bicycle ridden by two people", Subclass::Vehicle),
    ("skiing", "sport of gliding over snow on skis", Subclass::Sport),
    ("surfing", "riding breaking waves on a board", Subclass::Sport),
    ("tennis", "racket sport played over a net", Subclass::Sport),
    ("baseball", "bat-and-ball game played between two teams of nine", Subclass::Sport),
    ("skateboarding", "riding and performing tricks on a skateboard", Subclass::Sport),
    ("kite flying", "recreation of flying a tethered kite", Subclass::Sport),
    ("frisbee", "throwing and catching a flying disc", Subclass::Sport),
    ("Coca-Cola", "carbonated brown colored soft drink", Subclass::Company),
    ("Apple", "technology company known for the iPhone", Subclass::Company),
    ("Nike", "sportswear company with a swoosh logo", Subclass::Company),
    ("Toyota", "Japanese automobile manufacturer", Subclass::Company),
    ("Heinz", "food company known for tomato ketchup", Subclass::Company),
    ("Boeing", "American aircraft manufacturer", Subclass::Company),
    ("hammer", "hand tool for driving nails", Subclass::Tool),
    ("chainsaw", "portable saw with a motorized chain", Subclass::Tool),
    ("umbrella", "canopy that shields from rain", Subclass::Tool),
    ("scissors", "hand tool with two crossing blades", Subclass::Tool),
    ("toaster", "appliance for browning bread", Subclass::Tool),
    ("microwave oven", "appliance that heats food with microwaves", Subclass::Tool),
    ("wetsuit", "rubber garment worn in cold water", Subclass::Clothing),
    ("tuxedo", "formal evening suit", Subclass::Clothing),
    ("raincoat", "waterproof coat", Subclass::Clothing),
    ("necktie", "strip of cloth worn around the collar", Subclass::Clothing),
    ("baseball cap", "soft cap with a stiff front brim", Subclass::Clothing),
    ("kimono", "traditional Japanese robe", Subclass::Clothing),
    ("Eiffel Tower", "wrought-iron lattice tower in Paris", Subclass::PointOfInterest),
    ("Big Ben", "clock tower at the Palace of Westminster", Subclass::PointOfInterest),
    ("Golden Gate Bridge", "suspension bridge in San Francisco", Subclass::PointOfInterest),
    ("Times Square", "commercial intersection in Manhattan", Subclass::PointOfInterest),
    ("Statue of Liberty", "copper statue on Liberty Island", Subclass::PointOfInterest),
    ("firefighter", "person trained to put out fires", Subclass::Role),
    ("chef", "professional cook in a restaurant kitchen", Subclass::Role),
    ("police officer", "member of a police force", Subclass::Role),
    ("pilot", "person who flies an aircraft", Subclass::Role),
    ("umpire", "official who enforces the rules of a match", Subclass::Role),
];

/// Records the filter drops: one without description, one mostly non-ASCII.
const DROPPED: [(&str, &str, &str, Subclass); 2] = [
    ("Q9001", "lighthouse", "", Subclass::PointOfInterest),
    ("Q9002", "寿司", "日本の料理", Subclass::Tool),
];

const SETTINGS: [&str; 10] =
    ["street", "park", "building", "field", "river", "beach", "station", "market", "garden", "parking lot"];
const LIGHT: [&str; 6] = ["in bright sunlight", "at dusk", "on a cloudy day", "at night", "in the rain", "in the morning"];

const SIZES: [(u32, u32); 4] = [(640, 480), (500, 375), (224, 224), (480, 640)];

fn template(subclass: Subclass) -> (&'static str, &'static str, &'static str) {
    // (question, caption, category)
    match subclass {
        Subclass::Animal => ("what animal is this?", "an animal standing outdoors", "Plants and Animals"),
        Subclass::Vehicle => ("what kind of vehicle is this?", "a vehicle on the move", "Vehicles and Transportation"),
        Subclass::Sport => ("what sport is being played?", "people playing outside", "Sports and Recreation"),
        Subclass::Company => ("which company made this?", "a product on a table", "Brands, Companies, and Products"),
        Subclass::Tool => ("what is this object called?", "an object on a counter", "Objects, Material and Clothing"),
        Subclass::Clothing => ("what is the person wearing?", "a person posing for a photo", "Objects, Material and Clothing"),
        Subclass::PointOfInterest => ("what landmark is this?", "a famous place seen from afar", "Geo, History, Lang, and Culture"),
        Subclass::Role => ("what is this person's job?", "a person at work", "People and Everyday"),
    }
}

fn entity_id(i: usize) -> String {
    format!("Q{}", 100 + i)
}

/// Plan for one question: answer candidates the scripted model will offer.
struct Plan {
    entity: usize,
    candidates: Vec<String>,
}

fn make_examples(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    n: usize,
    plans: &mut Vec<Plan>,
    seen: &mut HashSet<(String, String)>,
) -> Vec<QAExample> {
    (0..n)
        .map(|i| {
            let e = rng.random_range(0..ENTITIES.len());
            let (label, _, subclass) = ENTITIES[e];
            let (question, caption, category) = template(subclass);
            let gold = label.to_lowercase();
            let peers: Vec<usize> = (0..ENTITIES.len()).filter(|&j| j != e && ENTITIES[j].2 == subclass).collect();
            let distractor = |rng: &mut ChaCha8Rng| ENTITIES[*peers.choose(rng).expect("peers")].0.to_lowercase();
            let mut answers = vec![gold.clone(); GOLD_COUNT];
            for a in answers.iter_mut().skip(7) {
                if rng.random_bool(0.5) {
                    *a = distractor(rng);
                }
            }
            let roll: f64 = rng.random();
            let candidates = if roll < 0.5 {
                vec![gold.clone(), distractor(rng), distractor(rng)]
            } else if roll < 0.8 {
                vec![distractor(rng), gold.clone(), distractor(rng)]
            } else {
                vec![distractor(rng), distractor(rng), distractor(rng)]
            };
            plans.push(Plan { entity: e, candidates });
            // Captions are unique per question so the scripted model can
            // tell prompts apart.
            let caption = loop {
                let c = format!("{caption} near a {} {}", SETTINGS.choose(rng).unwrap(), LIGHT.choose(rng).unwrap());
                if seen.insert((c.clone(), question.to_string())) {
                    break c;
                }
            };
            let mut ex = QAExample::new(&format!("{prefix}{i:03}"), &format!("{prefix}-img{i:03}"), question, &caption, answers);
            ex.category = category.to_string();
            (ex.width, ex.height) = SIZES[rng.random_range(0..SIZES.len())];
            ex
        })
        .collect()
}

/// Scripted language model: answer prompts get the planned candidates in
/// order (one per call), evidence prompts get a two-sentence rationale.
struct ScriptedLm {
    plans: HashMap<String, Vec<String>>,
    calls: Mutex<HashMap<String, usize>>,
}

fn last_block(prompt: &str) -> Option<String> {
    let at = prompt.rfind("Context: ")?;
    Some(prompt[at..].to_string())
}

impl LmClient for ScriptedLm {
    fn complete(&self, prompt: &str, _max_tokens: usize, _temperature: f64) -> Result<String, LmError> {
        if let Some(head) = prompt.strip_suffix(". This is because") {
            let answer = head.rsplit("? ").next().unwrap_or(head);
            let description = ENTITIES
                .iter()
                .find(|(l, _, _)| l.to_lowercase() == answer)
                .map_or("something often seen in pictures", |(_, d, _)| d);
            return Ok(format!(" the {answer} is known as the {description}. It appears in many photos like this one.\n"));
        }
        let key = last_block(prompt).ok_or_else(|| LmError::Request("unrecognized prompt".into()))?;
        let plan = self.plans.get(&key).ok_or_else(|| LmError::Request("no plan for prompt".into()))?;
        let mut calls = self.calls.lock().expect("calls lock");
        let n = calls.entry(key).or_insert(0);
        let out = format!(" {}\n\nContext:", plan[*n % plan.len()]);
        *n += 1;
        Ok(out)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn mix(parts: &[(f64, &[f64])], noise: f64, rng: &mut ChaCha8Rng) -> EmbeddingVector {
    let dim = parts[0].1.len();
    let mut v: Vec<f64> = gaussian(rng, dim).into_iter().map(|x| x * noise).collect();
    for (w, p) in parts {
        for (a, b) in v.iter_mut().zip(p.iter()) {
            *a += w * b;
        }
    }
    EmbeddingVector::normalized(&v).expect("non-zero vector")
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()
}

/// Writes every fixture file into `dir`, which must already hold `kat.toml`.
pub fn generate(dir: &Path) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&dir.join("kat.toml"), &[]).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(20220522);

    let mut dump = Vec::new();
    let mut entries = Vec::new();
    for (i, (label, description, subclass)) in ENTITIES.iter().enumerate() {
        let id = entity_id(i);
        dump.push(serde_json::json!({"id": id, "label": label, "description": description, "subclass": subclass.as_str()}).to_string());
        entries.push(KnowledgeEntry::new(id, *label, *description, *subclass));
    }
    for (id, label, description, subclass) in DROPPED {
        dump.push(serde_json::json!({"id": id, "label": label, "description": description, "subclass": subclass.as_str()}).to_string());
    }
    dump.shuffle(&mut rng);
    write_lines(&cfg.paths.kb_dump, dump)?;

    let mut plans = Vec::new();
    let mut seen = HashSet::new();
    let train = make_examples(&mut rng, "train", 90, &mut plans, &mut seen);
    let test = make_examples(&mut rng, "test", 30, &mut plans, &mut seen);
    write_dataset(BufWriter::new(File::create(&cfg.paths.dataset_train)?), &train)?;
    write_dataset(BufWriter::new(File::create(&cfg.paths.dataset_test)?), &test)?;

    let dim = cfg.retrieval.d_r;
    let concepts: Vec<Vec<f64>> = (0..ENTITIES.len()).map(|_| gaussian(&mut rng, dim)).collect();
    let kinds: HashMap<Subclass, Vec<f64>> = Subclass::ALL.iter().map(|&s| (s, gaussian(&mut rng, dim))).collect();
    let mut records: Vec<(String, EmbeddingVector)> = Vec::new();
    for (e, entry) in entries.iter().enumerate() {
        let v = mix(&[(1.0, &concepts[e]), (0.5, &kinds[&entry.subclass])], 0.3, &mut rng);
        records.push((text_key(&entry.rendered_text), v));
    }
    for (ex, plan) in train.iter().chain(&test).zip(&plans) {
        let subclass = ENTITIES[plan.entity].2;
        let v = mix(&[(1.0, &kinds[&subclass]), (0.7, &concepts[plan.entity])], 0.6, &mut rng);
        records.push((text_key(&similarity_text(ex)), v));
        let other = rng.random_range(0..ENTITIES.len());
        for region in generate_regions(&ex.image_id, ex.width, ex.height, &cfg.retrieval.window()) {
            let focus: f64 = rng.random_range(0.2..1.0);
            let v = mix(&[(focus, &concepts[plan.entity]), (1.0 - focus, &concepts[other])], 0.5, &mut rng);
            records.push((region_key(&region), v));
        }
    }
    records.sort_by(|a, b| a.0.cmp(&b.0));
    records.dedup_by(|a, b| a.0 == b.0);
    let src = cfg.paths.precomputed_embeddings.clone().expect("fixture config names precomputed embeddings");
    write_embeddings(BufWriter::new(File::create(&src)?), dim, &records)?;

    let provider = FileProvider::from_records(dim, records)?;
    let mut by_block = HashMap::new();
    for (ex, plan) in train.iter().chain(&test).zip(plans) {
        let block = format!("Context: {}\nQuestion: {}\nAnswer:", ex.caption, ex.question);
        by_block.insert(block, plan.candidates);
    }
    let client = RecordingClient::new(ScriptedLm { plans: by_block, calls: Mutex::new(HashMap::new()) });
    kat_cli::elicit_records(&cfg, &provider, &client)?;
    client.transcript().write(BufWriter::new(File::create(&cfg.paths.lm_transcript)?))?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    generate(&dir)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
