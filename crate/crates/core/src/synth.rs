//! Deterministic Turkish-like toy data: an agglutinative grammar with vowel
//! harmony, case marking and subject-verb agreement, used for pretraining
//! corpora, a part-of-speech tagging task and minimal pairs for every
//! acceptability phenomenon.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Source};
use crate::evalx::{MinimalPair, PHENOMENA};

/// A sentence with one part-of-speech tag per whitespace-separated word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    fn push(&mut self, word: impl Into<String>, tag: &str) {
        self.words.push(word.into());
        self.tags.push(tag.to_string());
    }
}

const VOWELS: &str = "aeıioöuü";
const BACK: &str = "aıou";
const VOICELESS: &str = "çfhkpsşt";

fn last_vowel(w: &str) -> char {
    w.chars().rev().find(|c| VOWELS.contains(*c)).unwrap_or('e')
}

fn ends_in_vowel(w: &str) -> bool {
    w.chars().last().is_some_and(|c| VOWELS.contains(c))
}

/// Two-way harmony vowel (a/e).
fn h2(w: &str) -> char {
    if BACK.contains(last_vowel(w)) {
        'a'
    } else {
        'e'
    }
}

/// Four-way harmony vowel (ı/i/u/ü).
fn h4(w: &str) -> char {
    match last_vowel(w) {
        'a' | 'ı' => 'ı',
        'e' | 'i' => 'i',
        'o' | 'u' => 'u',
        _ => 'ü',
    }
}

fn d_of(w: &str) -> char {
    if w.chars().last().is_some_and(|c| VOICELESS.contains(c)) {
        't'
    } else {
        'd'
    }
}

fn plural(w: &str) -> String {
    format!("{w}l{}r", h2(w))
}

fn acc(w: &str) -> String {
    let y = if ends_in_vowel(w) { "y" } else { "" };
    format!("{w}{y}{}", h4(w))
}

fn dat(w: &str) -> String {
    let y = if ends_in_vowel(w) { "y" } else { "" };
    format!("{w}{y}{}", h2(w))
}

fn loc(w: &str) -> String {
    format!("{w}{}{}", d_of(w), h2(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tense {
    Past,
    Progressive,
}

/// Grammatical person 0..6: 1sg, 2sg, 3sg, 1pl, 2pl, 3pl.
type Person = usize;

const PRONOUNS: [&str; 6] = ["ben", "sen", "o", "biz", "siz", "onlar"];
const REFLEXIVES: [&str; 6] = ["kendimi", "kendini", "kendini", "kendimizi", "kendinizi", "kendilerini"];
const ACC_PRONOUNS: [&str; 6] = ["beni", "seni", "onu", "bizi", "sizi", "onları"];
const GEN_PRONOUNS: [&str; 6] = ["benim", "senin", "onun", "bizim", "sizin", "onların"];

/// Stem as it appears before a vowel-initial suffix.
fn soft_stem(stem: &str) -> String {
    match stem {
        "git" => "gid".into(),
        "et" => "ed".into(),
        _ => stem.into(),
    }
}

fn past(stem: &str, p: Person, negative: bool) -> String {
    let mut w = stem.to_string();
    if negative {
        w = format!("{w}m{}", h2(&w));
    }
    let w = format!("{w}{}{}", d_of(&w), h4(&w));
    match p {
        0 => format!("{w}m"),
        1 => format!("{w}n"),
        2 => w,
        3 => format!("{w}k"),
        4 => format!("{w}n{}z", h4(&w)),
        _ => format!("{w}l{}r", h2(&w)),
    }
}

fn progressive_base(stem: &str, negative: bool) -> String {
    if negative {
        return format!("{stem}m{}yor", h4(stem));
    }
    match stem {
        "ye" => "yiyor".into(),
        "de" => "diyor".into(),
        _ if stem.ends_with('a') || stem.ends_with('e') => {
            let cut = &stem[..stem.len() - 1];
            format!("{cut}{}yor", h4(cut))
        }
        _ if ends_in_vowel(stem) => format!("{stem}yor"),
        _ => {
            let s = soft_stem(stem);
            format!("{s}{}yor", h4(&s))
        }
    }
}

/// The regularized (wrong) progressive of an irregular stem.
fn regular_progressive(stem: &str) -> String {
    if ends_in_vowel(stem) {
        format!("{stem}yor")
    } else {
        format!("{stem}{}yor", h4(stem))
    }
}

fn progressive(stem: &str, p: Person, negative: bool) -> String {
    let w = progressive_base(stem, negative);
    let ending = ["um", "sun", "", "uz", "sunuz", "lar"][p];
    format!("{w}{ending}")
}

fn conjugate(stem: &str, t: Tense, p: Person) -> String {
    match t {
        Tense::Past => past(stem, p, false),
        Tense::Progressive => progressive(stem, p, false),
    }
}

fn passive_past(stem: &str) -> String {
    let pass = if ends_in_vowel(stem) {
        format!("{stem}n")
    } else if stem.ends_with('l') {
        format!("{stem}{}n", h4(stem))
    } else {
        format!("{stem}{}l", h4(stem))
    };
    past(&pass, 2, false)
}

fn participle(stem: &str) -> String {
    let y = if ends_in_vowel(stem) { "y" } else { "" };
    let s = soft_stem(stem);
    format!("{s}{y}{}n", h2(&s))
}

/// `-DIK` nominalization with possessive agreement and accusative.
fn nominalized(stem: &str, p: Person) -> String {
    let base = format!("{stem}{}{}", d_of(stem), h4(stem));
    let v = h4(&base);
    match p {
        0 => format!("{base}ğ{v}m{v}"),
        1 => format!("{base}ğ{v}n{v}"),
        2 => format!("{base}ğ{v}n{v}"),
        3 => format!("{base}ğ{v}m{v}z{v}"),
        4 => format!("{base}ğ{v}n{v}z{v}"),
        _ => {
            let k = format!("{base}kl{}r", h2(&base));
            let w = h4(&k);
            format!("{k}{w}n{w}")
        }
    }
}

struct Verb {
    stem: &'static str,
    objects: &'static [&'static str],
}

const TRANSITIVE: &[Verb] = &[
    Verb { stem: "oku", objects: &["gazete", "defter", "masal", "şiir"] },
    Verb { stem: "ye", objects: &["elma", "pasta", "çorba", "armut"] },
    Verb { stem: "iç", objects: &["süt", "kahve", "çay", "limonata"] },
    Verb { stem: "aç", objects: &["kapı", "pencere", "kutu", "defter"] },
    Verb { stem: "yıka", objects: &["araba", "masa", "pencere", "bardak"] },
    Verb { stem: "gör", objects: &["ev", "araba", "göl", "deniz", "bahçe"] },
    Verb { stem: "sev", objects: &["film", "oyun", "deniz", "masal"] },
    Verb { stem: "al", objects: &["kalem", "defter", "elma", "araba"] },
    Verb { stem: "yaz", objects: &["şiir", "masal", "cümle", "not"] },
    Verb { stem: "bul", objects: &["kalem", "anahtar", "yol", "kutu"] },
    Verb { stem: "iste", objects: &["kahve", "çay", "elma", "oyun"] },
    Verb { stem: "bekle", objects: &["otobüs", "tren", "misafir", "haber"] },
];

const DITRANSITIVE: &[&str] = &["ver", "göster", "gönder", "anlat"];
const INTRANSITIVE: &[&str] = &["gel", "koş", "uyu", "otur", "gül"];
const MOTION: &[&str] = &["git", "gel", "koş", "dön"];
const IRREGULAR: &[&str] = &["git", "ye", "et"];
const ANIMATE: &[&str] = &["kedi", "kız", "adam", "öğretmen", "doktor", "kadın", "öğrenci", "komşu"];
const PLACES: &[&str] = &["ev", "okul", "bahçe", "göl", "park", "pazar", "kütüphane", "hastane", "köy"];
const ADJECTIVES: &[&str] = &["büyük", "küçük", "güzel", "eski", "yeni", "kırmızı", "temiz", "uzun"];
const PAST_ADVERBS: &[&str] = &["dün", "geçen hafta", "sabah"];
const PROGRESSIVE_ADVERBS: &[&str] = &["şimdi", "şu anda", "hala"];

fn pick<'a, T: ?Sized>(rng: &mut ChaCha8Rng, xs: &'a [&'a T]) -> &'a T {
    xs.choose(rng).expect("non-empty table")
}

/// Deterministic sentence generator over the toy grammar.
pub struct Grammar {
    rng: ChaCha8Rng,
}

impl Grammar {
    pub fn new(seed: u64) -> Self {
        Grammar {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn subject(&mut self, s: &mut TaggedSentence) -> Person {
        match self.rng.random_range(0..3) {
            0 => {
                let p = self.rng.random_range(0..6);
                s.push(PRONOUNS[p], "PRON");
                p
            }
            1 => {
                s.push(pick(&mut self.rng, ANIMATE), "NOUN");
                2
            }
            _ => {
                s.push(plural(pick(&mut self.rng, ANIMATE)), "NOUN");
                5
            }
        }
    }

    fn tense_with_adverb(&mut self, s: &mut TaggedSentence) -> Tense {
        let t = if self.rng.random_bool(0.5) {
            Tense::Past
        } else {
            Tense::Progressive
        };
        if self.rng.random_bool(0.4) {
            let adv = match t {
                Tense::Past => pick(&mut self.rng, PAST_ADVERBS),
                Tense::Progressive => pick(&mut self.rng, PROGRESSIVE_ADVERBS),
            };
            for w in adv.split(' ') {
                s.push(w, "ADV");
            }
        }
        t
    }

    /// Object noun phrase: `bir` objects stay bare, definite ones take the
    /// accusative.
    fn object(&mut self, verb: &Verb, s: &mut TaggedSentence) {
        let noun = pick(&mut self.rng, verb.objects);
        let det = self.rng.random_range(0..4);
        match det {
            0 => s.push("bir", "DET"),
            1 => s.push(*["bu", "şu"].choose(&mut self.rng).unwrap(), "DET"),
            2 => s.push(*["iki", "üç", "beş"].choose(&mut self.rng).unwrap(), "NUM"),
            _ => {}
        }
        if self.rng.random_bool(0.4) {
            s.push(pick(&mut self.rng, ADJECTIVES), "ADJ");
        }
        if det == 0 || det == 2 {
            s.push(noun, "NOUN");
        } else {
            s.push(acc(noun), "NOUN");
        }
    }

    fn clause(&mut self, s: &mut TaggedSentence) {
        let kind = self.rng.random_range(0..10);
        let t = self.tense_with_adverb(s);
        let p = self.subject(s);
        match kind {
            0..=4 => {
                let verb = TRANSITIVE.choose(&mut self.rng).unwrap();
                if kind == 4 {
                    s.push(loc(pick(&mut self.rng, PLACES)), "NOUN");
                }
                self.object(verb, s);
                s.push(conjugate(verb.stem, t, p), "VERB");
            }
            5 | 6 => {
                s.push(dat(pick(&mut self.rng, PLACES)), "NOUN");
                s.push(conjugate(pick(&mut self.rng, MOTION), t, p), "VERB");
            }
            7 | 8 => {
                s.push(dat(pick(&mut self.rng, ANIMATE)), "NOUN");
                let verb = TRANSITIVE.choose(&mut self.rng).unwrap();
                s.push(acc(pick(&mut self.rng, verb.objects)), "NOUN");
                s.push(conjugate(pick(&mut self.rng, DITRANSITIVE), t, p), "VERB");
            }
            _ => {
                if self.rng.random_bool(0.5) {
                    s.push(loc(pick(&mut self.rng, PLACES)), "NOUN");
                }
                s.push(conjugate(pick(&mut self.rng, INTRANSITIVE), t, p), "VERB");
            }
        }
    }

    pub fn sentence(&mut self) -> TaggedSentence {
        let mut s = TaggedSentence {
            words: Vec::new(),
            tags: Vec::new(),
        };
        self.clause(&mut s);
        if self.rng.random_bool(0.15) {
            s.push("ve", "CCONJ");
            self.clause(&mut s);
        }
        s.push(".", "PUNCT");
        s
    }
}

/// Distinct sentences a pretraining corpus is drawn from.
pub const SENTENCE_POOL: usize = 64;

/// Documents of 3 to 8 sentences until at least `target_bytes` of text.
/// Sentences are drawn from a fixed pool of [`SENTENCE_POOL`] grammar
/// sentences, so the corpus is repetitive at the sentence level.
pub fn grammar_corpus(seed: u64, target_bytes: usize) -> Vec<Document> {
    let mut g = Grammar::new(seed);
    let pool: Vec<String> = (0..SENTENCE_POOL).map(|_| g.sentence().text()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0C5);
    let sources = [Source::Mc4Like, Source::OscarLike, Source::WikiLike];
    let mut docs = Vec::new();
    let mut bytes = 0;
    while bytes < target_bytes {
        let n = rng.random_range(3..=8);
        let text = (0..n)
            .map(|_| pool[rng.random_range(0..pool.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        bytes += text.len();
        docs.push(Document {
            id: format!("synth-{}", docs.len()),
            text,
            source: sources[docs.len() % 3],
        });
    }
    docs
}

pub fn tagging_task(seed: u64, n: usize) -> Vec<TaggedSentence> {
    let mut g = Grammar::new(seed ^ 0x7A6);
    (0..n).map(|_| g.sentence()).collect()
}

/// The most frequent tag and its share of all words.
pub fn majority_tag(sentences: &[TaggedSentence]) -> (String, f64) {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    let mut total = 0;
    for s in sentences {
        for t in &s.tags {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
    }
    let (tag, n) = counts.into_iter().max_by_key(|&(t, n)| (n, std::cmp::Reverse(t))).unwrap_or(("O", 0));
    (tag.to_string(), n as f64 / total.max(1) as f64)
}

fn other_person(rng: &mut ChaCha8Rng, p: Person, same_form: &[&str; 6]) -> Person {
    loop {
        let q = rng.random_range(0..6);
        if same_form[q] != same_form[p] {
            return q;
        }
    }
}

fn pair_for(phenomenon: &str, rng: &mut ChaCha8Rng) -> (String, String) {
    let p: Person = rng.random_range(0..6);
    let pron = PRONOUNS[p];
    let verb = TRANSITIVE.choose(rng).unwrap();
    let obj = pick(rng, verb.objects);
    let animate = pick(rng, ANIMATE);
    let animate2 = pick(rng, ANIMATE);
    let place = pick(rng, PLACES);
    let place2 = loop {
        let q = pick(rng, PLACES);
        if q != place {
            break q;
        }
    };
    let intr = pick(rng, INTRANSITIVE);
    let s = |ws: &[&str]| format!("{} .", ws.join(" "));
    match phenomenon {
        "anaphor_agreement" => {
            let q = other_person(rng, p, &REFLEXIVES);
            let v = past("gör", p, false);
            (s(&[pron, REFLEXIVES[p], &v]), s(&[pron, REFLEXIVES[q], &v]))
        }
        "argument_structure_transitive" => {
            let v = past(verb.stem, p, false);
            (s(&[pron, "bu", &acc(obj), &v]), s(&[pron, "bu", &dat(obj), &v]))
        }
        "argument_structure_ditransitive" => {
            let v = past(pick(rng, DITRANSITIVE), p, false);
            (s(&[pron, &dat(animate), &acc(obj), &v]), s(&[pron, animate, &acc(obj), &v]))
        }
        "binding" => {
            let p = [0, 1, 3, 4][rng.random_range(0..4)];
            let v = past("gör", p, false);
            (s(&[PRONOUNS[p], REFLEXIVES[p], &v]), s(&[PRONOUNS[p], ACC_PRONOUNS[p], &v]))
        }
        "determiners" => {
            let v = past(verb.stem, p, false);
            (s(&[pron, "bu", &acc(obj), &v]), s(&[pron, &acc(obj), "bu", &v]))
        }
        "ellipsis" => {
            let v = past(verb.stem, 2, false);
            let good = format!("{animate} {} {v} , {animate2} de .", acc(obj));
            let bad = format!("{animate} {} {v} , de {animate2} .", acc(obj));
            (good, bad)
        }
        "irregular_forms" => {
            let stem = pick(rng, IRREGULAR);
            let good = progressive_base(stem, false);
            let bad = regular_progressive(stem);
            (s(&[animate, &good]), s(&[animate, &bad]))
        }
        "island_effects" => {
            let v = past(verb.stem, p, false);
            (
                format!("{pron} neyi {v} ?"),
                format!("{pron} neyi {v} mi ?"),
            )
        }
        "nominalization" => {
            let q = rng.random_range(0..6);
            let know = progressive("bil", p, false);
            let nom = nominalized(intr, q);
            (
                s(&[pron, GEN_PRONOUNS[q], &nom, &know]),
                s(&[pron, PRONOUNS[q], &nom, &know]),
            )
        }
        "npi_licensing" => (
            s(&["hiç", "kimse", &past(intr, 2, true)]),
            s(&["hiç", "kimse", &past(intr, 2, false)]),
        ),
        "passives" => {
            let v = passive_past(verb.stem);
            (s(&[obj, &v]), s(&[&acc(obj), &v]))
        }
        "quantifiers" => (
            s(&["her", animate, &past(intr, 2, false)]),
            s(&["her", &plural(animate), &past(intr, 5, false)]),
        ),
        "relative_clauses" => {
            let rel = pick(rng, INTRANSITIVE);
            let main = past(intr, 2, false);
            (
                s(&[&participle(rel), animate, &main]),
                s(&[&past(rel, 2, false), animate, &main]),
            )
        }
        "scrambling" => {
            let v = past(verb.stem, p, false);
            (s(&[&acc(obj), pron, &v]), s(&[obj, pron, &v]))
        }
        "subject_agreement" => {
            let q = loop {
                let q = rng.random_range(0..6);
                if past(verb.stem, q, false) != past(verb.stem, p, false) {
                    break q;
                }
            };
            let o = acc(obj);
            (s(&[pron, &o, &past(verb.stem, p, false)]), s(&[pron, &o, &past(verb.stem, q, false)]))
        }
        "suspended_affixation" => {
            let v = past(intr, p, false);
            (
                s(&[pron, place, "ve", &loc(place2), &v]),
                s(&[pron, &loc(place), "ve", place2, &v]),
            )
        }
        other => unreachable!("unknown phenomenon {other}"),
    }
}

/// `per_phenomenon` pairs for each of the sixteen phenomena, in order.
pub fn minimal_pairs(seed: u64, per_phenomenon: usize) -> Vec<MinimalPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1E);
    let mut out = Vec::with_capacity(per_phenomenon * PHENOMENA.len());
    for ph in PHENOMENA {
        let mut made = 0;
        while made < per_phenomenon {
            let (good, bad) = pair_for(ph, &mut rng);
            if good == bad {
                continue;
            }
            out.push(MinimalPair {
                phenomenon: ph.to_string(),
                good,
                bad,
            });
            made += 1;
        }
    }
    out
}
