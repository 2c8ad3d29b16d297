"""Access to the bundled fixtures in ``conceptneuro/data``."""
import json
from functools import lru_cache
from importlib import resources

from .graph import Atlas, atlas_from_records


def data_path(name: str):
    return resources.files("conceptneuro") / "data" / name


def _load(name):
    return json.loads(data_path(name).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def bundled_atlas() -> Atlas:
    """Glasser 360 cortical areas plus 19 subcortical structures."""
    return atlas_from_records(_load("atlas_glasser379.json"))


@lru_cache(maxsize=None)
def bundled_lexicon():
    from .concepts import Lexicon

    raw = _load("lexicon_glasser379.json")
    lex = Lexicon(raw["terms"], tuple(raw["positive_keywords"]), tuple(raw["negative_keywords"]))
    lex.validate(bundled_atlas())
    return lex


@lru_cache(maxsize=None)
def disorder_table() -> dict:
    return _load("disorder_terms.json")


@lru_cache(maxsize=None)
def generated_concepts() -> dict:
    """Unfiltered LLM concept lines per disorder key (Anxiety, ODD, ADHD, OCD, Conduct)."""
    return _load("generated_concepts.json")
