#!/usr/bin/env python3
"""Generates the deterministic test fixtures under fixtures/.

Everything is derived from planted bigram count tables, so the expected
lexicon can be computed here with an independent implementation (textbook
2x2 Pearson chi-square divided by the grand total) and frozen as a golden
file. The corpus texts are built so each planted mention becomes exactly
one bigram: every sentence is "<w1> <w2>." with both words outside the
stopword list.

Run from the repository root:  python3 scripts/gen_fixtures.py
"""

import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "data")
OUT = os.path.join(ROOT, "fixtures")

# ---------------------------------------------------------------------------
# Planted vocabulary. Strong terms carry a heavy one-party signal, weak terms
# a faint one (they exist to be truncated by set_size). All words must be
# lowercase alphanumeric and absent from the stopword list.

DEM_STRONG = [
    ("climate", "crisis"), ("voting", "rights"), ("gun", "violence"),
    ("health", "coverage"), ("reproductive", "freedom"), ("union", "workers"),
    ("student", "debt"), ("clean", "energy"), ("affordable", "housing"),
    ("child", "care"), ("wealthy", "corporations"), ("minimum", "wage"),
    ("public", "schools"), ("prescription", "drugs"), ("civil", "rights"),
    ("social", "justice"), ("renewable", "power"), ("paid", "leave"),
    ("racial", "equity"), ("consumer", "protection"),
]
DEM_WEAK = [
    ("community", "colleges"), ("transit", "funding"),
    ("rural", "broadband"), ("arts", "funding"),
]
REP_STRONG = [
    ("border", "security"), ("illegal", "immigration"), ("tax", "relief"),
    ("small", "businesses"), ("religious", "liberty"), ("second", "amendment"),
    ("federal", "overreach"), ("energy", "independence"), ("national", "debt"),
    ("school", "choice"), ("free", "markets"), ("law", "enforcement"),
    ("military", "strength"), ("family", "values"), ("government", "spending"),
    ("radical", "agenda"), ("private", "sector"), ("state", "sovereignty"),
    ("welfare", "reform"), ("regulatory", "burden"),
]
REP_WEAK = [
    ("coal", "miners"), ("farm", "subsidies"),
    ("flag", "protection"), ("estate", "taxes"),
]
# Equal relative frequency in both parties => chi-square 0 => skipped.
TIE = ("bipartisan", "compromise")
# Reference rank 1 => inside the exclude-top window => dropped.
GENERIC_IN_CONGRESS = ("united", "states")
# Never occurs in the reference corpus => no rank => dropped.
UNRANKED = ("quantum", "parity")

GENERICS = [
    (GENERIC_IN_CONGRESS, 300), (("american", "people"), 280),
    (("federal", "government"), 260), (("white", "house"), 240),
    (("common", "ground"), 220),
]

# Golden lexicon parameters (mirrored by the CLI test config).
EXCLUDE_TOP = 5
REFERENCE_TOP = 150
SET_SIZE = 20


def load_stopwords():
    words = set()
    for name in ("stopwords_en.txt", "congress_overused.txt"):
        with open(os.path.join(DATA, name), encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    words.add(line.lower())
    return words


def check_vocabulary(stopwords):
    # GENERIC_IN_CONGRESS deliberately appears in both lists (spoken in
    # Congress *and* ranked in the reference window); nothing else may repeat.
    congress = DEM_STRONG + DEM_WEAK + REP_STRONG + REP_WEAK + [
        TIE, GENERIC_IN_CONGRESS, UNRANKED]
    assert len(set(congress)) == len(congress), "duplicate planted bigram"
    reference = [b for b, _ in GENERICS]
    assert len(set(reference)) == len(reference), "duplicate generic bigram"
    assert not (set(congress) & set(reference)) - {GENERIC_IN_CONGRESS}
    for w1, w2 in congress + reference:
        for w in (w1, w2):
            assert w.isalnum() and w == w.lower(), f"bad word {w!r}"
            assert w not in stopwords, f"planted word {w!r} is a stopword"


def congress_tables():
    """Per-party planted counts: bigram -> mentions."""
    dem, rep = {}, {}
    for i, b in enumerate(DEM_STRONG):
        dem[b] = 30 + i
        if i % 3:
            rep[b] = i % 3
    for i, b in enumerate(REP_STRONG):
        rep[b] = 30 + i
        if i % 3:
            dem[b] = i % 3
    for b in DEM_WEAK:
        dem[b], rep[b] = 6, 4
    for b in REP_WEAK:
        rep[b], dem[b] = 6, 4
    dem[TIE] = rep[TIE] = 10
    dem[GENERIC_IN_CONGRESS], rep[GENERIC_IN_CONGRESS] = 15, 20
    dem[UNRANKED] = 12
    # Pad the lighter side with one-off bigrams that have no reference rank,
    # so the two party totals match exactly and the tie term is an exact
    # relative-frequency tie.
    diff = sum(dem.values()) - sum(rep.values())
    lighter = rep if diff > 0 else dem
    for i in range(abs(diff)):
        lighter[(f"pad{i}", "remarks")] = 1
    assert sum(dem.values()) == sum(rep.values())
    return dem, rep


def reference_table():
    ref = {}
    for b, n in GENERICS:
        ref[b] = n
    rank = 0
    for b in DEM_STRONG + REP_STRONG + DEM_WEAK + REP_WEAK + [TIE]:
        ref[b] = 100 - rank  # ranks 6..54, inside the window
        rank += 1
    for i in range(160):
        ref[(f"filler{i:03d}", "term")] = 1
    return ref


def sentences(table):
    """One 'w1 w2.' sentence per mention, grouped per bigram."""
    out = []
    for (w1, w2), n in sorted(table.items()):
        out.extend([f"{w1} {w2}."] * n)
    return out


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def corpus_docs(table, source, party, docs):
    """Distributes sentences round-robin over `docs` documents."""
    buckets = [[] for _ in range(docs)]
    for i, s in enumerate(sentences(table)):
        buckets[i % docs].append(s)
    rows = []
    for i, bucket in enumerate(buckets):
        row = {
            "id": f"{source}-{i:02d}",
            "text": " ".join(bucket),
            "source": source,
        }
        if party:
            row["party"] = party
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Independent lexicon oracle.

def chi_square(rep_uses, dem_uses, rep_rest, dem_rest):
    """Textbook 2x2 Pearson chi-square divided by the grand total."""
    n = rep_uses + dem_uses + rep_rest + dem_rest
    cells = [
        (rep_uses, rep_uses + dem_uses, rep_uses + rep_rest),
        (dem_uses, rep_uses + dem_uses, dem_uses + dem_rest),
        (rep_rest, rep_rest + dem_rest, rep_uses + rep_rest),
        (dem_rest, rep_rest + dem_rest, dem_uses + dem_rest),
    ]
    chi2 = 0.0
    for obs, row, col in cells:
        expected = row * col / n
        chi2 += (obs - expected) ** 2 / expected
    return chi2 / n


def reference_ranks(ref):
    ordered = sorted(ref.items(), key=lambda kv: (-kv[1], kv[0]))
    return {b: i + 1 for i, (b, _) in enumerate(ordered)}


def build_lexicon(dem, rep, ranks):
    dem_total, rep_total = sum(dem.values()), sum(rep.values())
    dem_terms, rep_terms = [], []
    for b in set(dem) | set(rep):
        rank = ranks.get(b)
        if rank is None or rank <= EXCLUDE_TOP or rank > REFERENCE_TOP:
            continue
        du, ru = dem.get(b, 0), rep.get(b, 0)
        chi2 = chi_square(ru, du, rep_total - ru, dem_total - du)
        if du / dem_total > ru / rep_total:
            dem_terms.append((b, chi2))
        elif ru / rep_total > du / dem_total:
            rep_terms.append((b, chi2))
    for terms in (dem_terms, rep_terms):
        terms.sort(key=lambda t: (-t[1], t[0]))
        del terms[SET_SIZE:]
    return dem_terms, rep_terms


def write_golden_lexicon(dem_terms, rep_terms):
    os.makedirs(os.path.join(OUT, "golden"), exist_ok=True)
    path = os.path.join(OUT, "golden", "lexicon.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("bigram,party,chi2,rank\n")
        for party, terms in (("democratic", dem_terms), ("republican", rep_terms)):
            for i, ((w1, w2), chi2) in enumerate(terms):
                f.write(f"{w1} {w2},{party},{chi2!r},{i + 1}\n")


# ---------------------------------------------------------------------------
# Outlets with rating-proportional bigram mixtures.

OUTLETS = [
    ("outlet-left", "left", 180),
    ("outlet-leanleft", "lean_left", 140),
    ("outlet-center", "center", 100),
    ("outlet-leanright", "lean_right", 60),
    ("outlet-right", "right", 20),
]


def outlet_docs():
    rows = []
    for source, _rating, dem_n in OUTLETS:
        parts = [
            f"{w1} {w2}." for i in range(dem_n)
            for (w1, w2) in [DEM_STRONG[i % len(DEM_STRONG)]]
        ]
        parts += [
            f"{w1} {w2}." for i in range(200 - dem_n)
            for (w1, w2) in [REP_STRONG[i % len(REP_STRONG)]]
        ]
        rows.append({"id": source, "text": " ".join(parts), "source": source})
    return rows


def write_ratings():
    with open(os.path.join(OUT, "ratings.csv"), "w", encoding="utf-8") as f:
        f.write("unit,rating\n")
        for source, rating, _ in OUTLETS:
            f.write(f"{source},{rating}\n")


# ---------------------------------------------------------------------------
# Mock-server fixtures for the end-to-end run.

FIGURES = [
    ("Dana Brook", "senator", "left"),
    ("Priya Nand", "governor", "left"),
    ("Viktor Hale", "senator", "right"),
    ("Miguel Ortega", "justice", "right"),
]
TOPICS = ["healthcare", "immigration", "education"]

PRAISE = "I find {name} an admirable public servant who strengthens public life."
SCORN = "I find {name} a troubling presence whose record raises alarm."
ANSWER_SENTENCES = {
    "strongly agree": "I strongly agree with this statement.",
    "agree": "I agree with this statement.",
    "disagree": "I disagree with this statement.",
    "strongly disagree": "I strongly disagree with this statement.",
}


def load_bank():
    with open(os.path.join(DATA, "tests", "sample_bank.toml"), "rb") as f:
        return tomllib.load(f)


def mock_rules():
    rules = []
    # Figure commentary: each model praises its own side.
    for name, _cat, align in FIGURES:
        for model in ("mock-left", "mock-right"):
            own = (model == "mock-left") == (align == "left")
            text = (PRAISE if own else SCORN).format(name=name)
            rules.append({"model": model, "prompt_contains": [name],
                          "response": text})
    # Test statements: pick the most left / most right answer per item.
    bank = load_bank()
    for item in bank["items"]:
        weights = [e + s for e, s in zip(item["econ"], item["social"])]
        low = item["answers"][min(range(len(weights)), key=lambda i: (weights[i], i))]
        high = item["answers"][max(range(len(weights)), key=lambda i: (weights[i], i))]
        for model, answer in (("mock-left", low), ("mock-right", high)):
            rules.append({"model": model,
                          "prompt_contains": [item["statement"]],
                          "response": ANSWER_SENTENCES[answer]})
    # Judge rules, keyed on rubric marker phrases.
    judge = [
        (["Classify the political viewpoint", "outlook alpha"], "left"),
        (["Classify the political viewpoint", "outlook bravo"], "right"),
        (["Rate the sentiment expressed toward", "admirable"], "positive"),
        (["Rate the sentiment expressed toward", "troubling"], "negative"),
        (["Decide which of the allowed answers", "I strongly agree with"],
         "strongly agree"),
        (["Decide which of the allowed answers", "I agree with"], "agree"),
        (["Decide which of the allowed answers", "I strongly disagree with"],
         "strongly disagree"),
        (["Decide which of the allowed answers", "I disagree with"], "disagree"),
    ]
    for contains, response in judge:
        rules.append({"model": "mock-judge", "prompt_contains": contains,
                      "response": response})
    # Policy prompts: catch-alls, so they must come last.
    rules.append({"model": "mock-left", "prompt_contains": [], "response":
                  "Policy outlook alpha: the climate crisis and voting rights "
                  "deserve decisive action."})
    rules.append({"model": "mock-right", "prompt_contains": [], "response":
                  "Policy outlook bravo: border security and tax relief must "
                  "anchor any reform."})
    return {"default_response": "Nothing to add.", "rules": rules}


def main():
    os.makedirs(OUT, exist_ok=True)
    stopwords = load_stopwords()
    check_vocabulary(stopwords)

    dem, rep = congress_tables()
    ref = reference_table()
    write_jsonl(os.path.join(OUT, "congress.jsonl"),
                corpus_docs(dem, "dem-floor", "democratic", 6)
                + corpus_docs(rep, "rep-floor", "republican", 6))
    write_jsonl(os.path.join(OUT, "reference.jsonl"),
                corpus_docs(ref, "newswire", None, 8))

    ranks = reference_ranks(ref)
    dem_terms, rep_terms = build_lexicon(dem, rep, ranks)
    assert len(dem_terms) == SET_SIZE and len(rep_terms) == SET_SIZE
    assert {b for b, _ in dem_terms} == set(DEM_STRONG)
    assert {b for b, _ in rep_terms} == set(REP_STRONG)
    write_golden_lexicon(dem_terms, rep_terms)

    write_jsonl(os.path.join(OUT, "outlets.jsonl"), outlet_docs())
    write_ratings()

    with open(os.path.join(OUT, "figures_small.csv"), "w", encoding="utf-8") as f:
        f.write("name,category,alignment\n")
        for name, cat, align in FIGURES:
            f.write(f"{name},{cat},{align}\n")
    with open(os.path.join(OUT, "topics_small.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(TOPICS) + "\n")
    with open(os.path.join(OUT, "mock_fixtures.json"), "w", encoding="utf-8") as f:
        json.dump(mock_rules(), f, indent=2, ensure_ascii=False)
        f.write("\n")
    print("fixtures written to", OUT)


if __name__ == "__main__":
    sys.exit(main())
