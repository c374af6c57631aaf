#!/usr/bin/env python3
"""Regenerates data/stopwords_en.txt (exactly 409 entries).

Union of scikit-learn's English stop words and the classic 179-word
treebank list (apostrophes dropped to keep every entry a plain
alphanumeric token), topped up from a fixed supplement of high-frequency
filler words. Deterministic: rerunning reproduces the file byte for byte.
"""

import pathlib

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

TARGET = 409

TREEBANK = """
i me my myself we our ours ourselves you youre youve youll youd your yours
yourself yourselves he him his himself she shes her hers herself it its
itself they them their theirs themselves what which who whom this that
thatll these those am is are was were be been being have has had having do
does did doing a an the and but if or because as until while of at by for
with about against between into through during before after above below to
from up down in out on off over under again further then once here there
when where why how all any both each few more most other some such no nor
not only own same so than too very s t can will just don dont should
shouldve now d ll m o re ve y ain aren arent couldn couldnt didn didnt
doesn doesnt hadn hadnt hasn hasnt haven havent isn isnt ma mightn mightnt
mustn mustnt needn neednt shan shant shouldn shouldnt wasn wasnt weren
werent won wont wouldn wouldnt
""".split()

SUPPLEMENT = """
im id ive ill hes theyre theyve theyll weve wed whats heres theres wheres
lets okay yes yeah oh really said say says gonna wanna got gets getting
went goes going came coming know knows knew think thinks thought maybe
actually basically certainly probably definitely
""".split()


def main() -> None:
    words = set(ENGLISH_STOP_WORDS) | set(TREEBANK)
    assert all(w.isalnum() and w == w.lower() for w in words)
    for word in SUPPLEMENT:
        if len(words) == TARGET:
            break
        assert word.isalnum() and word == word.lower()
        words.add(word)
    assert len(words) == TARGET, f"have {len(words)}, want {TARGET}"

    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "stopwords_en.txt"
    lines = ["# Common English stop words removed before bigram extraction."]
    lines += sorted(words)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out} ({len(words)} entries)")


if __name__ == "__main__":
    main()
