"""Synthetic task-oriented corpora: grammar, utterances, audio, splits.

The default grammar covers six assistant domains with flat and
compositional templates. Every template instantiation yields the utterance
word sequence together with its parse tree, so generated annotations
round-trip through the parser by construction.

Audio features are a stand-in channel: each lexicon word owns a seeded
base vector, an utterance emits a few jittered noisy frames per word, and
the "mismatched" channel blends in a fixed linear distortion with
different duration and noise statistics to emulate a synthetic-speech
domain gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import annotations as anno
from . import asr_stub
from .records import UtteranceRecord
from .seeding import derive_seed, rng_for


class FractionOutOfRange(ValueError):
    pass


class BadRatios(ValueError):
    pass


# -- grammar -------------------------------------------------------------


@dataclass(frozen=True)
class SlotFill:
    """A slot filled from a lexicon pool."""

    label: str
    pool: str


@dataclass(frozen=True)
class NestedFill:
    """A slot whose filler is a nested intent (compositional parse)."""

    label: str
    template: "Template"


@dataclass(frozen=True)
class Template:
    intent: str
    parts: tuple

    @property
    def compositional(self) -> bool:
        return any(isinstance(p, NestedFill) for p in self.parts)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    templates: tuple


@dataclass(frozen=True)
class Grammar:
    domains: tuple
    pools: dict = field(hash=False)

    def templates(self, compositional: bool) -> list[Template]:
        out = []
        for d in self.domains:
            out.extend(t for t in d.templates if t.compositional == compositional)
        return out

    def intent_labels(self) -> list[str]:
        labels = set()

        def walk(t: Template):
            labels.add(t.intent)
            for p in t.parts:
                if isinstance(p, NestedFill):
                    walk(p.template)

        for d in self.domains:
            for t in d.templates:
                walk(t)
        return sorted(labels)

    def slot_labels(self) -> list[str]:
        labels = set()

        def walk(t: Template):
            for p in t.parts:
                if isinstance(p, SlotFill):
                    labels.add(p.label)
                elif isinstance(p, NestedFill):
                    labels.add(p.label)
                    walk(p.template)

        for d in self.domains:
            for t in d.templates:
                walk(t)
        return sorted(labels)

    def ontology_tokens(self) -> list[str]:
        toks = [f"[IN:{i}" for i in self.intent_labels()]
        toks += [f"[SL:{s}" for s in self.slot_labels()]
        return sorted(toks) + [anno.CLOSE_TOKEN]

    def lexicon_words(self) -> list[str]:
        words = set()
        for fillers in self.pools.values():
            for filler in fillers:
                words.update(filler.split())
        for d in self.domains:
            def walk(t: Template):
                for p in t.parts:
                    if isinstance(p, str):
                        words.update(p.split())
                    elif isinstance(p, NestedFill):
                        walk(p.template)
            for t in d.templates:
                walk(t)
        return sorted(words)


def _t(intent: str, *parts) -> Template:
    return Template(intent, tuple(parts))


def default_grammar() -> Grammar:
    """Six domains, 16 intents, 27 slot types, compositional templates in
    navigation and messaging."""
    pools = {
        "playlist": ("jazz vibes", "rock classics", "chill hits", "morning jazz",
                     "summer mix", "workout beats", "study lofi", "road trip"),
        "music_type": ("station", "album", "song", "radio"),
        "artist": ("jacques brel", "nina simone", "john coltrane", "miles davis",
                   "joni mitchell", "leonard cohen", "etta james"),
        "device": ("kitchen speaker", "living room", "headphones", "bedroom speaker"),
        "city": ("boston", "sao paulo", "newcastle", "denver", "chicago",
                 "paris", "london", "austin", "new york", "san francisco"),
        "place": ("the airport", "downtown", "the stadium", "the office",
                  "central park", "the harbor", "city hall"),
        "travel_method": ("driving", "walking", "cycling", "transit"),
        "road": ("the highway", "main street", "the bridge", "the tunnel"),
        "condition": ("ice", "flooding", "roadwork", "an accident"),
        "event_name": ("eagles", "lakers", "warriors", "bruins", "phillies",
                       "the symphony", "comic con"),
        "event_cat": ("game", "match", "concert", "show"),
        "date_time": ("tomorrow morning", "tonight", "next friday", "eight pm",
                      "noon", "monday evening", "this weekend"),
        "duration": ("ten minutes", "half an hour", "two hours", "five minutes",
                     "one hour"),
        "alarm_name": ("workout", "meeting", "pickup", "medicine", "laundry"),
        "contact": ("john", "maria", "alex", "grandma", "sarah", "bob", "the team"),
        "content": ("i will be late", "see you soon", "happy birthday",
                    "call me back", "on my way"),
        "weather_attr": ("rain", "snow", "wind", "humidity", "fog"),
        "organizer": ("the city", "the library", "the club"),
        "timer_name": ("pasta", "tea", "laps", "bread"),
    }
    music = DomainSpec("music", (
        _t("PLAY_MUSIC", "play", SlotFill("MUSIC_PLAYLIST", "playlist"),
           SlotFill("MUSIC_TYPE", "music_type")),
        _t("PLAY_MUSIC", "play", "some", SlotFill("MUSIC_ARTIST", "artist"), "on",
           SlotFill("MUSIC_DEVICE", "device")),
        _t("PAUSE_MUSIC", "pause", "the", "music", "on",
           SlotFill("MUSIC_DEVICE", "device")),
        _t("CREATE_PLAYLIST", "make", "a", "playlist", "called",
           SlotFill("MUSIC_PLAYLIST", "playlist")),
        _t("ADD_TO_PLAYLIST", "add", SlotFill("MUSIC_ALBUM", "artist"), "to",
           SlotFill("MUSIC_PLAYLIST", "playlist")),
    ))
    navigation = DomainSpec("navigation", (
        _t("GET_DIRECTIONS", SlotFill("METHOD_TRAVEL", "travel_method"),
           "directions", "to", SlotFill("DESTINATION", "place")),
        _t("GET_DIRECTIONS", "directions", "from", SlotFill("SOURCE", "city"),
           "to", SlotFill("DESTINATION", "city")),
        _t("GET_DIRECTIONS", SlotFill("METHOD_TRAVEL", "travel_method"),
           "directions", "to", "the",
           NestedFill("DESTINATION",
                      _t("GET_EVENT", SlotFill("NAME_EVENT", "event_name"),
                         SlotFill("CAT_EVENT", "event_cat")))),
        _t("GET_DISTANCE", "how", "far", "is", SlotFill("DESTINATION", "city"),
           "from", SlotFill("SOURCE", "city")),
        _t("GET_TRAFFIC", "is", "there", SlotFill("ROAD_CONDITION", "condition"),
           "on", SlotFill("PATH", "road")),
    ))
    alarm = DomainSpec("alarm", (
        _t("CREATE_ALARM", "set", "an", "alarm", "for",
           SlotFill("DATE_TIME", "date_time"), "called",
           SlotFill("ALARM_NAME", "alarm_name")),
        _t("DELETE_ALARM", "delete", "my", SlotFill("ALARM_NAME", "alarm_name"),
           "alarm"),
        _t("SNOOZE_ALARM", "snooze", "for", SlotFill("SNOOZE_DURATION", "duration")),
    ))
    weather = DomainSpec("weather", (
        _t("GET_WEATHER", "will", "there", "be", SlotFill("WEATHER_ATTRIBUTE", "weather_attr"),
           "in", SlotFill("LOCATION", "city"), SlotFill("FORECAST_DATE", "date_time")),
        _t("GET_WEATHER", "forecast", "for", SlotFill("LOCATION", "city")),
        _t("GET_SUNRISE", "when", "is", "sunrise", "in", SlotFill("LOCATION", "city")),
    ))
    messaging = DomainSpec("messaging", (
        _t("SEND_MESSAGE", "text", SlotFill("RECIPIENT", "contact"), "saying",
           SlotFill("CONTENT_EXACT", "content")),
        _t("SEND_MESSAGE", "tell", SlotFill("RECIPIENT", "contact"), "about", "the",
           NestedFill("CONTENT_EXACT",
                      _t("GET_EVENT", SlotFill("NAME_EVENT", "event_name"),
                         SlotFill("CAT_EVENT", "event_cat")))),
        _t("GET_MESSAGE", "read", "messages", "from", SlotFill("SENDER", "contact")),
        _t("GET_MESSAGE", "any", "messages", "from", SlotFill("SENDER", "contact"),
           SlotFill("MESSAGE_TIME", "date_time")),
    ))
    events = DomainSpec("events", (
        _t("GET_EVENT", "what", "events", "are", "in",
           SlotFill("EVENT_LOCATION", "city"), SlotFill("EVENT_DATE", "date_time")),
        _t("GET_EVENT", "is", "there", "a", SlotFill("CAT_EVENT", "event_cat"), "by",
           SlotFill("ORGANIZER", "organizer")),
        _t("CREATE_TIMER", "start", "a", SlotFill("TIMER_NAME", "timer_name"),
           "timer", "for", SlotFill("TIMER_DURATION", "duration")),
        _t("PAUSE_TIMER", "pause", "the", SlotFill("TIMER_NAME", "timer_name"),
           "timer"),
    ))
    return Grammar((music, navigation, alarm, weather, messaging, events), pools)


# -- corpus generation ----------------------------------------------------


def _instantiate(template: Template, pools: dict, rng) -> tuple[list[str], anno.ParseNode]:
    words: list[str] = []
    children: list = []
    for part in template.parts:
        if isinstance(part, str):
            for w in part.split():
                words.append(w)
                children.append(w)
        elif isinstance(part, SlotFill):
            filler = str(rng.choice(pools[part.pool])).split()
            words.extend(filler)
            children.append(anno.slot(part.label, *filler))
        else:
            sub_words, sub_node = _instantiate(part.template, pools, rng)
            words.extend(sub_words)
            children.append(anno.ParseNode(
                anno.OntologySymbol(anno.SymbolKind.SLOT, part.label), (sub_node,)
            ))
    node = anno.intent(template.intent, *children)
    return words, node


def generate_corpus(
    grammar: Grammar, n: int, compositional_fraction: float, seed: int
) -> list[UtteranceRecord]:
    """Generate ``n`` records (no audio, no hypotheses yet).

    Each record is derived from its own sub-seed, so sharding the index
    range across workers reproduces the same corpus in the same order.
    """
    if not 0.0 <= compositional_fraction <= 1.0:
        raise FractionOutOfRange(f"fraction {compositional_fraction} not in [0,1]")
    flat = grammar.templates(compositional=False)
    comp = grammar.templates(compositional=True)
    records = []
    for i in range(n):
        rng = rng_for(seed, "gen", i)
        use_comp = comp and rng.random() < compositional_fraction
        pool = comp if use_comp else flat
        template = pool[int(rng.integers(0, len(pool)))]
        words, node = _instantiate(template, grammar.pools, rng)
        records.append(
            UtteranceRecord(
                id=f"utt-{i:06d}",
                ref_text=" ".join(words),
                annotation=anno.serialize(node),
            )
        )
    return records


# -- audio feature channel -------------------------------------------------


@dataclass
class FeatureChannel:
    """Word-keyed synthetic feature generator.

    ``blend > 0`` mixes each word's base vector with a fixed seeded linear
    distortion of itself, which shifts the whole channel systematically
    while keeping it word-identifying.
    """

    name: str = "natural"
    feat_dim: int = 16
    frames_per_word: int = 6
    jitter: int = 1
    noise_scale: float = 0.10
    word_seed: int = 101
    blend: float = 0.0
    distort_seed: int = 707

    def __post_init__(self):
        self._vec_cache: dict[str, np.ndarray] = {}
        rng = rng_for(self.distort_seed, "distort", self.feat_dim)
        self._rot = rng.normal(0.0, 1.0 / np.sqrt(self.feat_dim),
                               size=(self.feat_dim, self.feat_dim))
        self._shift = rng.normal(0.0, 0.5, size=self.feat_dim)

    def word_vector(self, word: str) -> np.ndarray:
        vec = self._vec_cache.get(word)
        if vec is None:
            vec = rng_for(self.word_seed, "word", word).normal(size=self.feat_dim)
            if self.blend > 0.0:
                vec = (1.0 - self.blend) * vec + self.blend * (self._rot @ vec + self._shift)
            self._vec_cache[word] = vec
        return vec


def natural_channel(feat_dim: int = 16) -> FeatureChannel:
    return FeatureChannel(name="natural", feat_dim=feat_dim)


def mismatched_channel(feat_dim: int = 16) -> FeatureChannel:
    return FeatureChannel(
        name="mismatched",
        feat_dim=feat_dim,
        frames_per_word=8,
        jitter=2,
        noise_scale=0.22,
        blend=0.5,
    )


CHANNELS = {"natural": natural_channel, "mismatched": mismatched_channel}


def synth_audio_features(reference_text: str, channel: FeatureChannel, seed: int) -> np.ndarray:
    """(frames, feat_dim) features for an utterance; deterministic per seed.

    Values are rounded to 6 decimals so the on-disk JSON form is exactly
    the in-memory array.
    """
    words = reference_text.split()
    if not words:
        raise ValueError("reference text must be nonempty")
    rng = rng_for(seed, "feat", channel.name)
    chunks = []
    for word in words:
        k = channel.frames_per_word
        if channel.jitter:
            k += int(rng.integers(-channel.jitter, channel.jitter + 1))
        k = max(1, k)
        base = channel.word_vector(word)
        chunks.append(base[None, :] + channel.noise_scale * rng.normal(size=(k, channel.feat_dim)))
    return np.round(np.concatenate(chunks, axis=0), 6)


def attach_features(records, channel: FeatureChannel, seed: int) -> list[UtteranceRecord]:
    return [
        rec.with_(audio=synth_audio_features(rec.ref_text, channel, derive_seed(seed, rec.id)))
        for rec in records
    ]


def attach_hypotheses(records, error_model: asr_stub.AsrErrorModel, seed: int) -> list[UtteranceRecord]:
    """Corrupt each reference into a first-pass hypothesis and flag errors."""
    out = []
    for rec in records:
        hyp = asr_stub.corrupt(rec.ref_words, error_model, derive_seed(seed, rec.id))
        out.append(
            rec.with_(hyp_text=" ".join(hyp), has_asr_error=hyp != rec.ref_words)
        )
    return out


def split(records, ratios, seed: int):
    """Disjoint, exhaustive seeded split; largest-remainder rounding."""
    ratios = list(ratios)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios {ratios} must be nonnegative and sum to 1")
    n = len(records)
    order = rng_for(seed, "split").permutation(n)
    exact = [r * n for r in ratios]
    counts = [int(x) for x in exact]
    while sum(counts) < n:
        fracs = [(exact[i] - counts[i], -i) for i in range(len(ratios))]
        counts[fracs.index(max(fracs))] += 1
    parts = []
    at = 0
    for c in counts:
        parts.append([records[i] for i in order[at : at + c]])
        at += c
    return tuple(parts)


_HOMOPHONES = {
    "for": ["four"], "to": ["two", "too"], "new": ["knew"], "there": ["their"],
    "by": ["buy"], "in": ["inn"], "an": ["and"], "one": ["won"],
    "jacques": ["jock"], "miles": ["myles"], "john": ["jon"],
    "newcastle": ["new castle"], "sao": ["south"],
}


def build_confusion_pools(grammar: Grammar, seed: int) -> dict:
    """Per-word misrecognition pools from the grammar lexicon.

    Each pool mixes a hand-picked homophone where one exists, another real
    lexicon word (a confusion that reads as perfectly plausible text, so
    only the audio can resolve it), and a character-level perturbation.
    """
    words = grammar.lexicon_words()
    pools: dict[str, list[str]] = {}
    shuffled = list(words)
    rng_for(seed, "pool-pairing").shuffle(shuffled)
    partner = {w: shuffled[(i + 1) % len(shuffled)] for i, w in enumerate(shuffled)}
    for word in words:
        rng = rng_for(seed, "pool", word)
        alts = list(_HOMOPHONES.get(word, []))
        if partner[word] != word and partner[word] not in alts:
            alts.append(partner[word])
        while len(alts) < 3:
            cand = asr_stub.perturb_word(word, rng)
            if cand not in alts and cand != word:
                alts.append(cand)
        pools[word] = alts
    return pools
