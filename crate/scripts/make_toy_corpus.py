#!/usr/bin/env python3
"""Regenerate the bundled synthetic toy corpus under crates/core/data/toy/.

Every non-English language is a deterministic word-level cipher of the
English text: each lowercase word maps to a pseudo-word drawn from that
language's script, while named entities and numerals are kept verbatim.
The result is multiway-parallel, shares entity surfaces across languages
and has near-zero lexical overlap otherwise.
"""

import hashlib
import json
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data", "toy")

# (sentence, [(entity surface, label), ...]); entity surfaces are single tokens
# under the 13a tokenizer except where noted.
SENTENCES = [
    ("The museum in Paris opened its doors again in May after the long repairs", [("Paris", "GPE"), ("May", "DATE")]),
    ("Maria said the new bridge will carry trains between the two largest harbours", [("Maria", "PERSON")]),
    ("Farmers near Nairobi planted 300 trees to protect the dry hills from wind", [("Nairobi", "GPE"), ("300", "CARDINAL")]),
    ("The committee from Toyota reviewed every engine design before the spring meeting", [("Toyota", "ORG")]),
    ("Our small team walked along the quiet river and counted the birds at dawn", []),
    ("Students in Lagos learned Portuguese during a summer course at the library", [("Lagos", "GPE"), ("Portuguese", "LANGUAGE")]),
    ("The storm named Katrina destroyed many homes but the old church survived", [("Katrina", "EVENT")]),
    ("Ahmed bought a Corolla with money he saved while working at the market", [("Ahmed", "PERSON"), ("Corolla", "PRODUCT")]),
    ("Doctors at the hospital gave the first vaccine to children on Monday morning", [("first", "ORDINAL"), ("Monday", "DATE")]),
    ("The price of rice rose by 12 percent across the northern villages this year", [("12", "CARDINAL")]),
    ("A quiet wind moved through the valley while the children slept near the fire", []),
    ("Engineers from Siemens repaired the tower that stands beside the Danube every winter", [("Siemens", "ORG"), ("Danube", "LOC")]),
    ("The Buddhist monks of Kandy welcomed visitors with tea and songs", [("Buddhist", "NORP"), ("Kandy", "GPE")]),
    ("Elena wrote Solitude while she lived in a small house near Lima", [("Elena", "PERSON"), ("Solitude", "WORK_OF_ART"), ("Lima", "GPE")]),
    ("The council passed the Clean Water Act after months of long public debate", [("Clean Water Act", "LAW")]),
    ("Workers at Heathrow found a lost dog sleeping under a row of chairs", [("Heathrow", "FAC")]),
    ("The farmers sold 40 kilograms of coffee to traders from the coastal town", [("40 kilograms", "QUANTITY")]),
    ("The concert started at midnight and the crowd sang until the morning light", [("midnight", "TIME")]),
    ("Rivers in the south flooded twice this season and closed many roads", []),
    ("Kofi paid 500 dollars for a bicycle that he rides to school every day", [("Kofi", "PERSON"), ("500 dollars", "MONEY")]),
    ("The painters of Florence used bright colours that still shine after centuries", [("Florence", "GPE")]),
    ("The village in Ghana celebrated the harvest with drums and dancing for days", [("Ghana", "GPE")]),
    ("Nurses from UNICEF carried medicine across the mountains of Nepal on foot", [("UNICEF", "ORG"), ("Nepal", "GPE")]),
    ("The old teacher told stories about the sea to every child who listened", []),
]

# Out-of-benchmark sentences used as an eng-tam control bitext.
CONTROL = [
    "A young fisherman repaired his nets before the evening tide returned",
    "The baker shared warm bread with the neighbours who helped him move",
    "Heavy snow covered the road so the bus waited outside the station",
    "Two sisters planted a garden of beans and tomatoes behind their house",
    "The radio played old songs while the workers painted the hall",
    "Children collected shells along the beach and sorted them by colour",
    "The engineer checked the pump twice before the water reached the fields",
    "An old map showed a path that nobody had walked for many years",
]

LANGS = {
    # code: (kind, syllables | letters | code point range[, vowel sign base])
    "fra_Latn": ("latin", ["ra", "lu", "mé", "po", "ni", "sa", "ve", "cho", "ti", "gu", "bé", "on"]),
    "spa_Latn": ("latin", ["ca", "do", "ri", "ña", "le", "mo", "xu", "pe", "te", "ja", "ba", "ez"]),
    "por_Latn": ("latin", ["ão", "lh", "ca", "mi", "bo", "rê", "du", "fa", "nu", "se", "ço", "vi"]),
    "vie_Latn": ("latin", ["ng", "ươ", "bá", "tr", "hộ", "kh", "ầu", "mẹ", "đi", "qu", "lý", "xo"]),
    "tam_Taml": ("letters", "கஙசஜஞடணதநபமயரலவழளறன", 0x0BBE),
    "mal_Mlym": ("range", (0x0D15, 0x0D39), 0x0D3E),
    "zho_Hans": ("han", (0x4E00, 0x9FA5)),
}


def digest(*parts):
    h = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


def pseudo_word(lang, word):
    spec = LANGS[lang]
    x = digest(lang, word.lower())
    kind = spec[0]
    if kind == "latin":
        syl = spec[1]
        n = 2 + x % 2
        out = []
        for _ in range(n):
            x //= len(syl)
            out.append(syl[x % len(syl)])
        w = "".join(out)
        return w.capitalize() if word[0].isupper() else w
    if kind in ("range", "letters"):
        letters = spec[1] if kind == "letters" else [chr(c) for c in range(spec[1][0], spec[1][1] + 1)]
        sign = spec[2]
        out = []
        for i in range(2):
            x //= 37
            out.append(letters[x % len(letters)])
            if i == 0:
                out.append(chr(sign + (x % 3)))
        return "".join(out)
    lo, hi = spec[1]
    n = 1 + x % 2
    out = []
    for _ in range(n):
        x //= 4096
        out.append(chr(lo + x % (hi - lo + 1)))
    return "".join(out)


def entity_tokens(ents):
    toks = set()
    for surface, _ in ents:
        for t in surface.split():
            toks.add(t)
    return toks


def render(lang, sentence, ents):
    keep = entity_tokens(ents)
    words = sentence.split()
    out = [w if w in keep else pseudo_word(lang, w) for w in words]
    if lang == "zho_Hans":
        # Han words are written without spaces; Latin entities stay spaced.
        text = ""
        prev_han = False
        for w in out:
            han = all(0x4E00 <= ord(c) <= 0x9FA5 for c in w)
            if text and not (han and prev_han):
                text += " "
            text += w
            prev_han = han
        return text + "。"
    return " ".join(out) + "."


def main():
    os.makedirs(OUT, exist_ok=True)
    eng = [s + "." for s, _ in SENTENCES]
    with open(os.path.join(OUT, "eng_Latn.dev"), "w", encoding="utf-8") as f:
        f.write("\n".join(eng) + "\n")
    for lang in LANGS:
        lines = [render(lang, s, e) for s, e in SENTENCES]
        with open(os.path.join(OUT, f"{lang}.dev"), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    control = os.path.join(OUT, "control")
    os.makedirs(control, exist_ok=True)
    with open(os.path.join(control, "eng_Latn.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(s + "." for s in CONTROL) + "\n")
    with open(os.path.join(control, "tam_Taml.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(render("tam_Taml", s, []) for s in CONTROL) + "\n")
    with open(os.path.join(OUT, "eng_Latn.ner.jsonl"), "w", encoding="utf-8") as f:
        for i, (s, ents) in enumerate(SENTENCES):
            text = s + "."
            spans = []
            for surface, label in ents:
                start = text.index(surface)
                spans.append({"start": start, "end": start + len(surface), "label": label, "text": surface})
            if spans:
                f.write(json.dumps({"id": i, "spans": spans}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
