"""Shared phrase tables for caption generation, expansion, and verification.

The same tables drive three things: the mock LLM's deterministic rewrites,
the offline keyword-consistency check, and the emotion detector of the mock
classifier. Keeping them in one place guarantees that every caption the mock
produces passes the verifier (for the attributes it mentions) and that the
verifier recognizes all phrasings the rewrites can emit.

Matching policy: attribute levels are detected by case-insensitive substring
search over the phrase variants below; emotions and genders by word-boundary
regex. A caption may omit an attribute (omission is not a contradiction); it
fails verification only when it names a *different* level, gender, or emotion
than the measured one.
"""

from __future__ import annotations

import re

from ..corpus import EMOTIONS, StyleFactors

BASIC_TEMPLATE = (
    "The speaker, a {emotion} {gender}, speaks with {pitch} pitch, "
    "{energy} energy, at a {tempo} pace."
)

# (attribute, level) -> phrase variants; index 0 is the canonical wording the
# basic template produces, index 1 is the preferred synonym for rule 1.
LEVEL_PHRASES: dict[tuple[str, str], tuple[str, ...]] = {
    ("pitch", "low"): ("low pitch", "a deep, low pitch", "deep-voiced"),
    ("pitch", "normal"): ("normal pitch", "a mid-range pitch"),
    ("pitch", "high"): ("high pitch", "a bright, high pitch"),
    ("energy", "low"): ("low energy", "soft, low energy", "hushed"),
    ("energy", "normal"): ("normal energy", "measured energy"),
    ("energy", "high"): ("high energy", "radiating high energy", "forceful"),
    ("tempo", "low"): ("a low pace", "a distinctly low pace", "low pace"),
    ("tempo", "normal"): ("a normal pace", "a moderate, normal pace", "normal pace", "moderate pace"),
    ("tempo", "high"): ("a high pace", "a markedly high pace", "high pace"),
}

GENDER_WORDS: dict[str, tuple[str, ...]] = {
    "male": ("male", "man", "gentleman", "he", "him", "his"),
    "female": ("female", "woman", "lady", "she", "her", "hers"),
}

# keyword stems per emotion; used word-bounded for both detection in utterance
# text (mock classifier) and caption consistency checks
EMOTION_KEYWORDS: dict[str, tuple[str, ...]] = {
    "Angry": ("angry", "anger", "fury", "furious", "rage", "irate", "irritation", "irritated", "mad"),
    "Contempt": ("contempt", "contemptuous", "scorn", "scornful", "disdain", "dismissive"),
    "Disgusted": ("disgusted", "disgust", "revulsion", "repulsed", "distaste", "gross"),
    "Fear": ("fear", "afraid", "frightened", "terrified", "anxious", "scared", "unease", "uneasy", "tense"),
    "Happy": ("happy", "joy", "joyful", "delighted", "cheerful", "cheerfulness", "glad", "wonderful"),
    "Sad": ("sad", "sadness", "sorrow", "sorrowful", "mournful", "dejected", "miserable", "awful"),
    "Neutral": ("neutral", "calm", "composed", "matter-of-fact", "even-toned"),
    "Surprised": ("surprised", "surprise", "astonished", "astonishment", "amazed", "amazing", "startled", "unbelievable"),
}

EMOTION_INTENSE: dict[str, str] = {
    "Angry": "filled with a palpable sense of fury",
    "Contempt": "laced with open scorn",
    "Disgusted": "thick with plain disgust",
    "Fear": "gripped by sharp fear",
    "Happy": "brimming with unmistakable joy",
    "Sad": "weighed down by deep sorrow",
    "Neutral": "kept deliberately calm and even-toned",
    "Surprised": "charged with sudden astonishment",
}

EMOTION_SOFT: dict[str, str] = {
    "Angry": "tinged with mild irritation",
    "Contempt": "cooled by faint disdain",
    "Disgusted": "marked by mild distaste",
    "Fear": "edged with slight unease",
    "Happy": "carrying a quiet cheerfulness",
    "Sad": "touched by a faint sadness",
    "Neutral": "kept plainly calm",
    "Surprised": "lifted by mild surprise",
}

EMOTION_METAPHOR: dict[str, str] = {
    "Angry": "like a kettle about to boil over with fury",
    "Contempt": "like a raised eyebrow of cold scorn",
    "Disgusted": "like someone recoiling in disgust from spoiled food",
    "Fear": "like footsteps on a creaking floor, tight with fear",
    "Happy": "like sunlight breaking through, full of joy",
    "Sad": "like a slow rain of sorrow",
    "Neutral": "like a level horizon, calm and unhurried",
    "Surprised": "like a door flung open in sheer surprise",
}

EXPANSION_RULES: dict[int, str] = {
    1: "synonym replacement",
    2: "intensity amplification",
    3: "intensity softening",
    4: "clause reordering",
    5: "metaphorical emotion phrasing",
    6: "attribute merging into one clause",
    7: "second-person perspective",
    8: "terse register",
}


def _word_pattern(words: tuple[str, ...]) -> re.Pattern:
    return re.compile(r"\b(?:" + "|".join(re.escape(w) for w in words) + r")\b")


_GENDER_PATTERNS = {g: _word_pattern(ws) for g, ws in GENDER_WORDS.items()}
_EMOTION_PATTERNS = {e: _word_pattern(ws) for e, ws in EMOTION_KEYWORDS.items()}


def detect_emotion(text: str) -> str:
    """First emotion (in canonical order) whose keywords appear; else Neutral."""
    low = text.lower()
    for emotion in EMOTIONS:
        if emotion == "Neutral":
            continue
        if _EMOTION_PATTERNS[emotion].search(low):
            return emotion
    return "Neutral"


def mentioned_levels(caption: str) -> dict[str, set[str]]:
    """Attribute levels the caption names, per the shared phrase tables."""
    low = caption.lower()
    found: dict[str, set[str]] = {"pitch": set(), "energy": set(), "tempo": set()}
    for (attr, level), variants in LEVEL_PHRASES.items():
        if any(v in low for v in variants):
            found[attr].add(level)
    return found


def mentioned_genders(caption: str) -> set[str]:
    low = caption.lower()
    return {g for g, pat in _GENDER_PATTERNS.items() if pat.search(low)}


def mentioned_emotions(caption: str) -> set[str]:
    low = caption.lower()
    return {e for e, pat in _EMOTION_PATTERNS.items() if pat.search(low)}


def caption_consistent(caption: str, style: StyleFactors, emotion: str) -> bool:
    """Offline keyword check: no mentioned attribute may contradict the facts.

    Omitted attributes are fine; a mention of a wrong level/gender/emotion is
    a contradiction.
    """
    if not caption.strip():
        return False
    genders = mentioned_genders(caption)
    if genders - {style.gender}:
        return False
    for attr, levels in mentioned_levels(caption).items():
        actual = style.levels.get(attr)
        if actual is not None and levels - {actual}:
            return False
    emotions = mentioned_emotions(caption)
    if emotions - {emotion}:
        return False
    return True


def render_basic_description(
    emotion: str, gender: str, pitch: str, energy: str, tempo: str
) -> str:
    return BASIC_TEMPLATE.format(
        emotion=emotion, gender=gender, pitch=pitch, energy=energy, tempo=tempo
    )


def _replace_levels_with_synonyms(caption: str, levels: dict[str, str]) -> str:
    out = caption
    for attr, level in levels.items():
        variants = LEVEL_PHRASES[(attr, level)]
        if len(variants) >= 2 and variants[0] in out:
            out = out.replace(variants[0], variants[1])
    return out


def apply_expansion_rule(
    basic: str, rule_id: int, emotion: str, style: StyleFactors
) -> str:
    """Deterministic rewrite of a basic description under one of the 8 rules.

    This is the mock LLM's expansion behavior; a live LLM receives the same
    rule name in its prompt and may phrase things differently.
    """
    if rule_id not in EXPANSION_RULES:
        raise ValueError(f"expansion rule must be in 1..8, got {rule_id}")
    levels = {
        "pitch": style.levels.get("pitch", "normal"),
        "energy": style.levels.get("energy", "normal"),
        "tempo": style.levels.get("tempo", "normal"),
    }
    gender = style.gender
    pitch_c = LEVEL_PHRASES[("pitch", levels["pitch"])][0]
    energy_c = LEVEL_PHRASES[("energy", levels["energy"])][0]
    tempo_c = LEVEL_PHRASES[("tempo", levels["tempo"])][0]

    if rule_id == 1:
        return _replace_levels_with_synonyms(basic, levels)
    if rule_id == 2:
        return basic.replace(
            f"a {emotion} {gender}", f"a {gender} whose voice is {EMOTION_INTENSE[emotion]}"
        )
    if rule_id == 3:
        return basic.replace(
            f"a {emotion} {gender}", f"a {gender} whose voice is {EMOTION_SOFT[emotion]}"
        )
    if rule_id == 4:
        return (
            f"Speaking with {pitch_c} and {energy_c}, at {tempo_c}, "
            f"the speaker is a {emotion} {gender}."
        )
    if rule_id == 5:
        return f"{basic} It sounds {EMOTION_METAPHOR[emotion]}."
    if rule_id == 6:
        return (
            f"The speaker, a {emotion} {gender}, folds {pitch_c}, {energy_c}, "
            f"and {tempo_c} into a single breath."
        )
    if rule_id == 7:
        return (
            f"You hear a {emotion} {gender} speaking with {pitch_c}, "
            f"{energy_c}, at {tempo_c}."
        )
    # rule 8: terse register
    return (
        f"{emotion} {gender}; {levels['pitch']} pitch; {levels['energy']} energy; "
        f"{levels['tempo']} pace."
    )
