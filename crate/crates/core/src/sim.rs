//! A synthetic scene-graph world with oracle agents.
//!
//! Each scene stands in for an image: a few entities with attributes and
//! positions, relations between them and scene-wide flags. A generated task
//! asks which of four descriptions of the scene is accurate. The gold
//! description states every task fact correctly; each distractor gets one or
//! two required facts wrong, so the gold answer follows from the required
//! facts alone.
//!
//! [`OracleWorld`] plays every role. As the vision model it answers
//! sub-questions from the graph, optionally flipping yes/no answers. As the
//! questioner it reads the sub-questions already present in its prompt and
//! asks for unasked required facts, a fixed number per round. As the reasoner
//! it answers only once every required fact has been answered, and otherwise
//! names a missing fact after the unsure phrase. The agents only see what the
//! prompts contain, so runs exercise the real prompt and parse code.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, VisionBackend, VqaRequest};
use crate::dataset::VcrRecord;
use crate::rng::DetRng;
use crate::types::{AnswerSpace, Role, TaskInstance, TaskKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("cannot read world file {path}: {message}")]
    Io { path: String, message: String },
}

pub const CLASSES: [&str; 8] = ["person", "child", "dog", "horse", "car", "bicycle", "umbrella", "table"];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "gray"];
pub const PREDICATES: [&str; 4] = ["next to", "behind", "in front of", "looking at"];
pub const FLAGS: [&str; 4] = ["indoors", "daytime", "raining", "crowded"];
const ATTIRE: [&str; 6] = ["wedding dress", "suit", "raincoat", "school uniform", "swimsuit", "leather jacket"];
const ENTITIES_PER_SCENE: usize = 3;
const CHOICES: usize = 4;
/// Facts every scene can supply whatever its classes.
pub const MAX_FACTS_PER_TASK: usize = 14;

pub const UNKNOWN_ANSWER: &str = "I don't know";

fn colorable(class: &str) -> bool {
    !matches!(class, "person" | "child")
}

fn wears(class: &str) -> bool {
    matches!(class, "person" | "child")
}

fn actions(class: &str) -> &'static [&'static str] {
    match class {
        "person" | "child" => &["walking", "sitting", "running", "eating", "reading", "talking on the phone"],
        "dog" => &["running", "sleeping", "barking", "sitting"],
        "horse" => &["running", "grazing", "standing"],
        _ => &[],
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Left,
    Middle,
    Right,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Left, Position::Middle, Position::Right];

    pub fn phrase(self) -> &'static str {
        match self {
            Position::Left => "on the left",
            Position::Middle => "in the middle",
            Position::Right => "on the right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub class: String,
    pub attributes: BTreeMap<String, String>,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// A fact a sub-question can establish. Entities are referred to by id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum FactKey {
    Color { entity: String },
    Action { entity: String },
    Attire { entity: String },
    Position { entity: String },
    Relation { subject: String, predicate: String, object: String },
    Flag { name: String },
}

impl FactKey {
    pub fn is_boolean(&self) -> bool {
        matches!(self, FactKey::Relation { .. } | FactKey::Flag { .. })
    }
}

/// A statement that a fact has a given value, phrased as the oracle would
/// answer the fact's question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub fact: FactKey,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub id: String,
    pub image_ref: String,
    pub entities: Vec<Entity>,
    /// Relations that hold. Relation facts absent from this list are false.
    pub relations: Vec<Relation>,
    pub flags: BTreeMap<String, bool>,
    /// Facts the task's descriptions talk about; `facts[0]` is a color fact.
    pub facts: Vec<FactKey>,
    /// Prefix of `facts` the reasoner must learn before answering.
    pub required_facts: Vec<FactKey>,
    pub question: String,
    pub choices: Vec<String>,
    pub choice_claims: Vec<Vec<Claim>>,
    pub gold_answer: usize,
}

impl SceneGraph {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    fn entity_by_class(&self, class: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.class == class)
    }

    fn class_of(&self, id: &str) -> &str {
        self.entity(id).map(|e| e.class.as_str()).unwrap_or("thing")
    }

    /// The question whose oracle answer is the fact's value.
    pub fn question_for(&self, fact: &FactKey) -> String {
        match fact {
            FactKey::Color { entity } => format!("What color is the {}?", self.class_of(entity)),
            FactKey::Action { entity } => format!("What is the {} doing?", self.class_of(entity)),
            FactKey::Attire { entity } => format!("What is the {} wearing?", self.class_of(entity)),
            FactKey::Position { entity } => format!("Where is the {} in the image?", self.class_of(entity)),
            FactKey::Relation { subject, predicate, object } => format!(
                "Is the {} {predicate} the {}?",
                self.class_of(subject),
                self.class_of(object)
            ),
            FactKey::Flag { name } => format!("Is it {name}?"),
        }
    }

    /// The true value of a fact, or `None` if the graph does not define it.
    pub fn fact_value(&self, fact: &FactKey) -> Option<String> {
        let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
        match fact {
            FactKey::Color { entity } => self.entity(entity)?.attributes.get("color").cloned(),
            FactKey::Action { entity } => self.entity(entity)?.attributes.get("action").cloned(),
            FactKey::Attire { entity } => self.entity(entity)?.attributes.get("attire").cloned(),
            FactKey::Position { entity } => Some(self.entity(entity)?.position.phrase().to_string()),
            FactKey::Relation { subject, predicate, object } => {
                self.entity(subject)?;
                self.entity(object)?;
                Some(yes_no(self.relations.iter().any(|r| {
                    &r.subject == subject && &r.predicate == predicate && &r.object == object
                })))
            }
            FactKey::Flag { name } => self.flags.get(name).map(|b| yes_no(*b)),
        }
    }

    fn render_claim(&self, claim: &Claim) -> String {
        let v = &claim.value;
        let negate = |s: &str| if v == "yes" { s.replace("{not}", "") } else { s.replace("{not}", "not ") };
        match &claim.fact {
            FactKey::Color { entity } | FactKey::Action { entity } | FactKey::Position { entity } => {
                format!("The {} is {v}.", self.class_of(entity))
            }
            FactKey::Attire { entity } => format!("The {} is wearing {} {v}.", self.class_of(entity), article(v)),
            FactKey::Relation { subject, predicate, object } => negate(&format!(
                "The {} is {{not}}{predicate} the {}.",
                self.class_of(subject),
                self.class_of(object)
            )),
            FactKey::Flag { name } => negate(&format!("It is {{not}}{name}.")),
        }
    }

    pub fn caption(&self) -> String {
        let names: Vec<String> = self
            .entities
            .iter()
            .map(|e| format!("{} {}", article(&e.class), e.class))
            .collect();
        match names.as_slice() {
            [] => "An empty scene.".to_string(),
            [one] => format!("A scene with {one}."),
            [init @ .., last] => format!("A scene with {} and {last}.", init.join(", ")),
        }
    }

    /// Checks the structural invariants of a generated scene.
    pub fn validate(&self) -> Result<(), String> {
        for r in &self.relations {
            if self.entity(&r.subject).is_none() || self.entity(&r.object).is_none() {
                return Err(format!("{}: relation endpoint missing", self.id));
            }
        }
        for f in &self.facts {
            if self.fact_value(f).is_none() {
                return Err(format!("{}: fact {f:?} is not derivable", self.id));
            }
        }
        if !self.facts.starts_with(&self.required_facts) || self.required_facts.is_empty() {
            return Err(format!("{}: required facts must be a non-empty prefix of facts", self.id));
        }
        if self.choices.len() != CHOICES || self.choice_claims.len() != CHOICES || self.gold_answer >= CHOICES {
            return Err(format!("{}: malformed choices", self.id));
        }
        let gold = &self.choice_claims[self.gold_answer];
        if gold.iter().any(|c| self.fact_value(&c.fact).as_deref() != Some(c.value.as_str())) {
            return Err(format!("{}: gold description is not accurate", self.id));
        }
        Ok(())
    }

    pub fn task(&self) -> TaskInstance {
        TaskInstance {
            id: self.id.clone(),
            image_ref: self.image_ref.clone(),
            task_kind: TaskKind::VcrQa,
            main_text: self.question.clone(),
            answer_space: AnswerSpace::MultipleChoice {
                choices: self.choices.clone(),
            },
            gold: Some(self.gold_answer),
            region_tags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub seed: u64,
    pub n_tasks: usize,
    pub facts_per_task: usize,
    pub required_fraction: f64,
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_tasks == 0 || self.facts_per_task == 0 {
            return Err(SimError::InvalidParams("n_tasks and facts_per_task must be positive".into()));
        }
        if self.facts_per_task > MAX_FACTS_PER_TASK {
            return Err(SimError::InvalidParams(format!(
                "facts_per_task must be at most {MAX_FACTS_PER_TASK}"
            )));
        }
        if !(self.required_fraction > 0.0 && self.required_fraction <= 1.0) {
            return Err(SimError::InvalidParams("required_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn required_count(&self) -> usize {
        // the epsilon keeps products like 6 * 0.5 from rounding up
        let r = (self.facts_per_task as f64 * self.required_fraction - 1e-9).ceil() as usize;
        r.clamp(1, self.facts_per_task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub params: WorldParams,
    pub scenes: Vec<SceneGraph>,
}

impl World {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let io = |message: String| SimError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn tasks(&self) -> Vec<TaskInstance> {
        self.scenes.iter().map(SceneGraph::task).collect()
    }

    /// The tasks as VCR dataset records, one JSON object per line.
    pub fn to_records_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.scenes {
            out.push_str(&serde_json::to_string(&VcrRecord::from_task(&s.task())).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

fn fact_pool(entities: &[Entity]) -> Vec<FactKey> {
    let mut pool = Vec::new();
    for e in entities {
        let entity = e.id.clone();
        if e.attributes.contains_key("color") {
            pool.push(FactKey::Color { entity: entity.clone() });
        }
        if e.attributes.contains_key("action") {
            pool.push(FactKey::Action { entity: entity.clone() });
        }
        if e.attributes.contains_key("attire") {
            pool.push(FactKey::Attire { entity: entity.clone() });
        }
        pool.push(FactKey::Position { entity });
    }
    pool
}

fn alternative(rng: &mut DetRng, scene: &SceneGraph, fact: &FactKey, current: &str) -> String {
    let options: Vec<String> = match fact {
        FactKey::Color { .. } => COLORS.iter().map(|s| s.to_string()).collect(),
        FactKey::Action { entity } => actions(scene.class_of(entity)).iter().map(|s| s.to_string()).collect(),
        FactKey::Attire { .. } => ATTIRE.iter().map(|s| s.to_string()).collect(),
        FactKey::Position { .. } => Position::ALL.iter().map(|p| p.phrase().to_string()).collect(),
        FactKey::Relation { .. } | FactKey::Flag { .. } => vec!["yes".into(), "no".into()],
    };
    let others: Vec<String> = options.into_iter().filter(|o| o != current).collect();
    rng.pick(&others).clone()
}

fn generate_scene(params: &WorldParams, idx: usize) -> SceneGraph {
    let mut rng = DetRng::from_parts(&[b"scene", &params.seed.to_le_bytes(), &(idx as u64).to_le_bytes()]);

    // the first entity is colorable so that facts[0] can be a color fact
    let colorable_classes: Vec<&str> = CLASSES.iter().copied().filter(|c| colorable(c)).collect();
    let first = *rng.pick(&colorable_classes);
    let mut rest: Vec<&str> = CLASSES.iter().copied().filter(|c| *c != first).collect();
    rng.partial_shuffle(&mut rest, ENTITIES_PER_SCENE - 1);
    let classes: Vec<&str> = std::iter::once(first)
        .chain(rest.into_iter().take(ENTITIES_PER_SCENE - 1))
        .collect();

    let entities: Vec<Entity> = classes
        .iter()
        .enumerate()
        .map(|(i, class)| {
            let mut attributes = BTreeMap::new();
            if colorable(class) {
                attributes.insert("color".to_string(), rng.pick(&COLORS).to_string());
            }
            if !actions(class).is_empty() {
                attributes.insert("action".to_string(), rng.pick(actions(class)).to_string());
            }
            if wears(class) {
                attributes.insert("attire".to_string(), rng.pick(&ATTIRE).to_string());
            }
            Entity {
                id: format!("e{}", i + 1),
                class: class.to_string(),
                attributes,
                position: *rng.pick(&Position::ALL),
            }
        })
        .collect();

    let mut relations = Vec::new();
    let mut relation_facts = Vec::new();
    for s in &entities {
        for o in &entities {
            if s.id == o.id {
                continue;
            }
            let predicate = rng.pick(&PREDICATES).to_string();
            if rng.chance(0.5) {
                relations.push(Relation {
                    subject: s.id.clone(),
                    predicate: predicate.clone(),
                    object: o.id.clone(),
                });
            }
            relation_facts.push(FactKey::Relation {
                subject: s.id.clone(),
                predicate,
                object: o.id.clone(),
            });
        }
    }
    let flags: BTreeMap<String, bool> = FLAGS.iter().map(|f| (f.to_string(), rng.chance(0.5))).collect();

    let lead = FactKey::Color {
        entity: entities[0].id.clone(),
    };
    let mut pool: Vec<FactKey> = fact_pool(&entities)
        .into_iter()
        .chain(relation_facts)
        .chain(FLAGS.iter().map(|f| FactKey::Flag { name: f.to_string() }))
        .filter(|f| *f != lead)
        .collect();
    let extra = params.facts_per_task - 1;
    rng.partial_shuffle(&mut pool, extra);
    let facts: Vec<FactKey> = std::iter::once(lead).chain(pool.into_iter().take(extra)).collect();
    let required_facts = facts[..params.required_count()].to_vec();

    let id = format!("w{}-{idx}", params.seed);
    let mut scene = SceneGraph {
        image_ref: format!("world://{}/{idx}", params.seed),
        question: format!("Which description of scene {id} is accurate?"),
        id,
        entities,
        relations,
        flags,
        facts,
        required_facts,
        choices: Vec::new(),
        choice_claims: Vec::new(),
        gold_answer: 0,
    };

    let gold: Vec<Claim> = scene
        .facts
        .iter()
        .map(|f| Claim {
            fact: f.clone(),
            value: scene.fact_value(f).expect("generated facts are derivable"),
        })
        .collect();
    let required = scene.required_facts.len();
    let mut distractors: Vec<Vec<Claim>> = Vec::new();
    while distractors.len() < CHOICES - 1 {
        let mut d = gold.clone();
        let mut slots: Vec<usize> = (0..required).collect();
        let k = if required > 1 && rng.chance(0.5) { 2 } else { 1 };
        rng.partial_shuffle(&mut slots, k);
        for &i in &slots[..k] {
            d[i].value = alternative(&mut rng, &scene, &d[i].fact, &gold[i].value);
        }
        if !distractors.contains(&d) {
            distractors.push(d);
        }
    }
    let gold_answer = rng.index(CHOICES);
    distractors.insert(gold_answer, gold);
    scene.choices = distractors
        .iter()
        .map(|claims| claims.iter().map(|c| scene.render_claim(c)).collect::<Vec<_>>().join(" "))
        .collect();
    scene.choice_claims = distractors;
    scene.gold_answer = gold_answer;
    scene
}

/// Builds a world; identical parameters give identical worlds.
pub fn generate_world(params: &WorldParams) -> Result<World, SimError> {
    params.validate()?;
    Ok(World {
        params: *params,
        scenes: (0..params.n_tasks).map(|i| generate_scene(params, i)).collect(),
    })
}

fn normalize(q: &str) -> String {
    q.trim()
        .trim_end_matches(['?', '.', '!'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

static Q_COLOR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^what colou?r is the (\w+)$").unwrap());
static Q_ACTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^what is the (\w+) doing$").unwrap());
static Q_ATTIRE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^what is the (\w+) wearing$").unwrap());
static Q_WHERE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^where is the (\w+)(?: (?:located|positioned))?(?: in the (?:image|picture|scene))?$").unwrap()
});
static Q_FLAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:is|are) (?:it|they|this|the scene|the image) (indoors|daytime|raining|crowded)$").unwrap()
});
static Q_RELATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^is the (\w+) (next to|behind|in front of|looking at) the (\w+)$").unwrap()
});

/// The fact a question asks about, if it matches a known question shape.
pub fn question_fact(scene: &SceneGraph, question: &str) -> Option<FactKey> {
    let q = normalize(question);
    let ent = |class: &str| scene.entity_by_class(class).map(|e| e.id.clone());
    if let Some(c) = Q_COLOR.captures(&q) {
        return Some(FactKey::Color { entity: ent(&c[1])? });
    }
    if let Some(c) = Q_ACTION.captures(&q) {
        return Some(FactKey::Action { entity: ent(&c[1])? });
    }
    if let Some(c) = Q_ATTIRE.captures(&q) {
        return Some(FactKey::Attire { entity: ent(&c[1])? });
    }
    if let Some(c) = Q_WHERE.captures(&q) {
        return Some(FactKey::Position { entity: ent(&c[1])? });
    }
    if let Some(c) = Q_FLAG.captures(&q) {
        return Some(FactKey::Flag { name: c[1].to_string() });
    }
    if let Some(c) = Q_RELATION.captures(&q) {
        return Some(FactKey::Relation {
            subject: ent(&c[1])?,
            predicate: c[2].to_string(),
            object: ent(&c[3])?,
        });
    }
    None
}

/// Answers a question from the graph alone; unknown shapes get
/// [`UNKNOWN_ANSWER`].
pub fn oracle_answer(scene: &SceneGraph, question: &str) -> String {
    question_fact(scene, question)
        .and_then(|f| scene.fact_value(&f))
        .unwrap_or_else(|| UNKNOWN_ANSWER.to_string())
}

/// [`oracle_answer`] with yes/no answers flipped with probability `noise_rate`.
/// The flip is a pure function of the seed, the image and the question.
pub fn noisy_answer(scene: &SceneGraph, question: &str, noise_rate: f64, seed: u64) -> String {
    let answer = oracle_answer(scene, question);
    if noise_rate <= 0.0 || !(answer == "yes" || answer == "no") {
        return answer;
    }
    let mut rng = DetRng::from_parts(&[
        b"noise",
        &seed.to_le_bytes(),
        scene.image_ref.as_bytes(),
        normalize(question).as_bytes(),
    ]);
    if rng.chance(noise_rate) {
        if answer == "yes" { "no" } else { "yes" }.to_string()
    } else {
        answer
    }
}

/// Number of claims in each choice that contradict the known fact values.
pub fn contradictions(scene: &SceneGraph, known: &HashMap<FactKey, String>) -> Vec<usize> {
    scene
        .choice_claims
        .iter()
        .map(|claims| {
            claims
                .iter()
                .filter(|c| known.get(&c.fact).is_some_and(|v| normalize(v) != normalize(&c.value)))
                .count()
        })
        .collect()
}

/// The choice with the fewest contradictions, lowest index on ties.
pub fn best_choice(scene: &SceneGraph, known: &HashMap<FactKey, String>) -> usize {
    let counts = contradictions(scene, known);
    (0..counts.len()).min_by_key(|&i| (counts[i], i)).unwrap_or(0)
}

static SCENE_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bw\d+-\d+\b").unwrap());
static HISTORY_Q: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Sub-question (\d+): (.*)$").unwrap());
static HISTORY_A: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Sub-answer (\d+): (.*)$").unwrap());

/// Sub-question/sub-answer pairs found in a prompt, in history order.
pub fn read_history(prompt: &str) -> Vec<(String, String)> {
    let answers: HashMap<&str, &str> = HISTORY_A
        .captures_iter(prompt)
        .filter_map(|c| Some((c.get(1)?.as_str(), c.get(2)?.as_str().trim())))
        .collect();
    HISTORY_Q
        .captures_iter(prompt)
        .map(|c| {
            let answer = answers.get(&c[1]).copied().unwrap_or("");
            (c[2].trim().to_string(), answer.to_string())
        })
        .collect()
}

/// Every role played against one world.
pub struct OracleWorld {
    world: Arc<World>,
    by_id: HashMap<String, usize>,
    by_image: HashMap<String, usize>,
    noise_rate: f64,
    questions_per_round: usize,
    chat_model: String,
    vision_model: String,
}

impl fmt::Debug for OracleWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleWorld")
            .field("scenes", &self.world.scenes.len())
            .field("noise_rate", &self.noise_rate)
            .field("questions_per_round", &self.questions_per_round)
            .finish()
    }
}

impl OracleWorld {
    pub fn new(world: Arc<World>, noise_rate: f64, questions_per_round: usize) -> Self {
        let by_id = world.scenes.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let by_image = world.scenes.iter().enumerate().map(|(i, s)| (s.image_ref.clone(), i)).collect();
        OracleWorld {
            world,
            by_id,
            by_image,
            noise_rate,
            questions_per_round: questions_per_round.max(1),
            chat_model: format!("oracle-chat-q{}", questions_per_round.max(1)),
            vision_model: format!("oracle-vqa-p{noise_rate}"),
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    fn scene_in_prompt(&self, prompt: &str) -> Result<&SceneGraph, BackendError> {
        SCENE_ID
            .find_iter(prompt)
            .find_map(|m| self.by_id.get(m.as_str()))
            .map(|&i| &self.world.scenes[i])
            .ok_or_else(|| BackendError::Fatal("oracle: prompt names no known scene".into()))
    }

    fn scene_for_image(&self, image_ref: &str) -> Result<&SceneGraph, BackendError> {
        self.by_image
            .get(image_ref)
            .map(|&i| &self.world.scenes[i])
            .ok_or_else(|| BackendError::ImageNotFound(image_ref.to_string()))
    }

    /// Facts asked so far and the answers that establish a value.
    fn evidence(scene: &SceneGraph, prompt: &str) -> (BTreeSet<FactKey>, HashMap<FactKey, String>) {
        let mut asked = BTreeSet::new();
        let mut known = HashMap::new();
        for (q, a) in read_history(prompt) {
            let Some(fact) = question_fact(scene, &q) else { continue };
            asked.insert(fact.clone());
            if !a.is_empty() && !a.eq_ignore_ascii_case(UNKNOWN_ANSWER) {
                known.insert(fact, a);
            }
        }
        (asked, known)
    }

    fn ask(&self, scene: &SceneGraph, prompt: &str) -> String {
        let (asked, _) = Self::evidence(scene, prompt);
        let required: BTreeSet<&FactKey> = scene.required_facts.iter().collect();
        let pending: Vec<&FactKey> = scene
            .required_facts
            .iter()
            .chain(scene.facts.iter().filter(|f| !required.contains(f)))
            .filter(|f| !asked.contains(*f))
            .take(self.questions_per_round)
            .collect();
        let pending = if pending.is_empty() {
            vec![&scene.required_facts[0]]
        } else {
            pending
        };
        pending
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{}. {}", i + 1, scene.question_for(f)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn reason(&self, scene: &SceneGraph, prompt: &str) -> String {
        let (_, known) = Self::evidence(scene, prompt);
        match scene.required_facts.iter().find(|f| !known.contains_key(*f)) {
            Some(missing) => format!(
                "The sub-answers leave part of the scene unresolved. We are not sure which description is accurate. \
                 Still unknown: {}",
                scene.question_for(missing)
            ),
            None => format!(
                "The sub-answers settle every detail on which the descriptions disagree.\nAnswer: {}",
                best_choice(scene, &known) + 1
            ),
        }
    }

    fn finalize(&self, scene: &SceneGraph, prompt: &str) -> String {
        let (_, known) = Self::evidence(scene, prompt);
        format!(
            "Picking the description with the fewest conflicts with the sub-answers.\nAnswer: {}",
            best_choice(scene, &known) + 1
        )
    }
}

impl ChatBackend for OracleWorld {
    fn model_id(&self) -> &str {
        &self.chat_model
    }

    fn complete(&self, role: Role, req: &ChatRequest) -> Result<String, BackendError> {
        let prompt = req.prompt();
        let scene = self.scene_in_prompt(prompt)?;
        match role {
            Role::Questioner => Ok(self.ask(scene, prompt)),
            Role::Reasoner => Ok(self.reason(scene, prompt)),
            Role::Finalizer => Ok(self.finalize(scene, prompt)),
            Role::Answerer | Role::Captioner => Err(BackendError::NotCapable {
                role,
                detail: "oracle chat serves questioner, reasoner and finalizer".into(),
            }),
        }
    }
}

impl VisionBackend for OracleWorld {
    fn model_id(&self) -> &str {
        &self.vision_model
    }

    fn answer(&self, req: &VqaRequest) -> Result<String, BackendError> {
        let scene = self.scene_for_image(&req.image_ref)?;
        Ok(noisy_answer(scene, &req.question, self.noise_rate, self.world.params.seed))
    }

    fn caption(&self, image_ref: &str, _prompt: &str) -> Result<String, BackendError> {
        Ok(self.scene_for_image(image_ref)?.caption())
    }
}
