"""Regenerate the atlas, lexicon and disorder-term fixtures under src/conceptneuro/data/.

generated_concepts.json is curated by hand and not produced here.

Run from the repository root:  python scripts/build_fixtures.py
"""
import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "conceptneuro" / "data"

# HCP-MMP1.0 cortical areas, in the atlas' canonical index order (1..180).
GLASSER = """
V1 MST V6 V2 V3 V4 V8 4 3b FEF PEF 55b V3A RSC POS2 V7 IPS1 FFC V3B LO1 LO2 PIT MT
A1 PSL SFL PCV STV 7Pm 7m POS1 23d v23ab d23ab 31pv 5m 5mv 23c 5L 24dd 24dv 7AL SCEF
6ma 7Am 7PL 7PC LIPv VIP MIP 1 2 3a 6d 6mp 6v p24pr 33pr a24pr p32pr a24 d32 8BM p32
10r 47m 8Av 8Ad 9m 8BL 9p 10d 8C 44 45 47l a47r 6r IFJa IFJp IFSp IFSa p9-46v 46
a9-46v 9-46d 9a 10v a10p 10pp 11l 13l OFC 47s LIPd 6a i6-8 s6-8 43 OP4 OP1 OP2-3 52 RI
PFcm PoI2 TA2 FOP4 MI Pir AVI AAIC FOP1 FOP3 FOP2 PFt AIP EC PreS H ProS PeEc STGa
PBelt A5 PHA1 PHA3 STSda STSdp STSvp TGd TE1a TE1p TE2a TF TE2p PHT PH TPOJ1 TPOJ2
TPOJ3 DVT PGp IP2 IP1 IP0 PFop PF PFm PGi PGs V6A VMV1 VMV3 PHA2 V4t FST V3CD LO3
VMV2 31pd 31a VVC 25 s32 pOFC PoI1 Ig FOP5 p10p p47r TGv MBelt LBelt A4 STSva TE1m PI
a32pr p24
""".split()

SECTIONS = {
    "Primary Visual": "V1",
    "Early Visual": "V2 V3 V4",
    "Dorsal Stream Visual": "V3A V3B V6 V6A V7 IPS1",
    "Ventral Stream Visual": "V8 VVC PIT FFC VMV1 VMV2 VMV3",
    "MT+ Complex": "V3CD LO1 LO2 LO3 V4t FST MT MST PH",
    "Somatosensory and Motor": "4 3a 3b 1 2",
    "Paracentral Lobular and Mid Cingulate": "24dd 24dv 6mp 6ma SCEF 5m 5L 5mv",
    "Premotor": "55b 6d 6a FEF 6v 6r PEF",
    "Posterior Opercular": "43 FOP1 OP4 OP1 OP2-3 PFcm",
    "Early Auditory": "A1 LBelt MBelt PBelt RI",
    "Auditory Association": "A4 A5 STSdp STSda STSvp STSva STGa TA2",
    "Insular and Frontal Opercular": "52 PI Ig PoI1 PoI2 FOP2 FOP3 MI AVI AAIC Pir FOP4 FOP5",
    "Medial Temporal": "H PreS EC PeEc PHA1 PHA2 PHA3",
    "Lateral Temporal": "PHT TE1p TE1m TE1a TE2p TE2a TGv TGd TF",
    "Temporo-Parieto-Occipital Junction": "TPOJ1 TPOJ2 TPOJ3 STV PSL",
    "Superior Parietal": "LIPv LIPd VIP AIP MIP 7PC 7AL 7Am 7PL 7Pm",
    "Inferior Parietal": "PGp PGs PGi PFm PF PFt PFop IP0 IP1 IP2",
    "Posterior Cingulate": "DVT ProS POS1 POS2 RSC v23ab d23ab 31pv 31pd 31a 23d 23c PCV 7m",
    "Anterior Cingulate and Medial Prefrontal": "33pr p24pr a24pr p24 a24 p32pr a32pr d32 p32 s32 8BM 9m 10v 10r 25",
    "Orbital and Polar Frontal": "47s 47m a47r 11l 13l a10p p10p 10pp 10d OFC pOFC",
    "Inferior Frontal": "44 45 IFJp IFJa IFSp IFSa 47l p47r",
    "Dorsolateral Prefrontal": "8C 8Av i6-8 s6-8 SFL 8BL 9p 9a 8Ad p9-46v a9-46v 46 9-46d",
}

SUBCORTICAL = ["Thalamus", "Caudate", "Putamen", "Pallidum", "Hippocampus", "Amygdala",
               "Accumbens", "VentralDC", "Cerebellum"]


def area_section():
    out = {}
    for sec, areas in SECTIONS.items():
        for a in areas.split():
            assert a not in out, a
            out[a] = sec
    assert len(GLASSER) == 180 and len(set(GLASSER)) == 180
    assert set(out) == set(GLASSER), set(out) ^ set(GLASSER)
    return out


def build_atlas():
    sec = area_section()
    recs = []
    for hemi, tag in (("left", "L"), ("right", "R")):
        for area in GLASSER:
            recs.append({"id": len(recs), "name": f"{tag}_{area}",
                         "aliases": [f"{hemi} {area.lower()} area"],
                         "hemisphere": hemi, "group": sec[area]})
    for hemi, tag in (("left", "Left"), ("right", "Right")):
        for struct in SUBCORTICAL:
            name = f"{tag}-{struct}"
            if struct == "Cerebellum":
                name = f"{tag}-Cerebellum-Cortex"
            recs.append({"id": len(recs), "name": name,
                         "aliases": [f"{tag[0]} {struct.lower()}"],
                         "hemisphere": hemi, "group": "Subcortical"})
    recs.append({"id": len(recs), "name": "Brain-Stem", "aliases": ["brainstem"],
                 "hemisphere": "midline", "group": "Subcortical"})
    assert len(recs) == 379
    return recs


# Region vocabulary: term -> cortical areas (both hemispheres) and subcortical structures.
PREFRONTAL = (SECTIONS["Dorsolateral Prefrontal"] + " " + SECTIONS["Orbital and Polar Frontal"] + " "
              + SECTIONS["Inferior Frontal"] + " 8BM 9m 10v 10r")
ACC = "33pr p24pr a24pr p24 a24 p32pr a32pr d32 p32 s32 25"
PCC = "23d 23c v23ab d23ab 31pv 31pd 31a RSC"
FRONTAL = PREFRONTAL + " " + SECTIONS["Premotor"] + " 4 6mp 6ma SCEF"
OCCIPITAL = "V1 V2 V3 V4 V3A V3B V6 V7 V8 V3CD LO1 LO2 LO3"
INSULA = "Ig PoI1 PoI2 MI AVI AAIC PI"
PARAHIPPO = "PHA1 PHA2 PHA3 PeEc EC PreS TF"
DMN = "7m PCV v23ab d23ab 31pv 31pd 31a POS1 RSC PGi PGs 10r 10v 9m p32 a24 s32 TE1a"
SFG = "SFL s6-8 8BL 8Ad 9p 9a 8BM 9m"
IFG = SECTIONS["Inferior Frontal"]
MOTOR = "4 6d 6v 6a 6r 55b"
SMA = "6ma 6mp SCEF"
SOMATOSENSORY = "3a 3b 1 2"
SENSORIMOTOR = "4 3a 3b 1 2 6d 6mp"
OFC = "OFC pOFC 11l 13l 47m 47s"
PRECUNEUS = "7m PCV 7Pm 7Am POS1"
FUSIFORM = "FFC VVC PIT"
STG = "A4 A5 STGa TA2 PBelt LBelt MBelt"
WORKING_MEMORY = "46 p9-46v a9-46v 9-46d 8Av 8C IFJp AIP IP1 IP2 7PC"

REGION_TERMS = {
    "amygdala": ("", "Amygdala"),
    "prefrontal": (PREFRONTAL, ""),
    "prefrontal cortex": (PREFRONTAL, ""),
    "prefrontal regions": (PREFRONTAL, ""),
    "dorsolateral prefrontal cortex": (SECTIONS["Dorsolateral Prefrontal"], ""),
    "dlpfc": (SECTIONS["Dorsolateral Prefrontal"], ""),
    "orbitofrontal": (OFC, ""),
    "orbitofrontal cortex": (OFC, ""),
    "ofc": (OFC, ""),
    "anterior cingulate": (ACC, ""),
    "anterior cingulate cortex": (ACC, ""),
    "acc": (ACC, ""),
    "posterior cingulate cortex": (PCC, ""),
    "cingulate": (ACC + " " + PCC + " 24dd 24dv", ""),
    "cingulate cortex": (ACC + " " + PCC + " 24dd 24dv", ""),
    "insula": (INSULA, ""),
    "insular": (INSULA, ""),
    "anterior insula": ("AVI AAIC MI", ""),
    "thalamus": ("", "Thalamus"),
    "thalamic": ("", "Thalamus"),
    "hippocampus": ("H", "Hippocampus"),
    "hippocampal": ("H", "Hippocampus"),
    "parahippocampal": (PARAHIPPO, ""),
    "parahippocampal gyrus": (PARAHIPPO, ""),
    "memory": ("H " + PARAHIPPO, "Hippocampus"),
    "occipital": (OCCIPITAL, ""),
    "occipital cortex": (OCCIPITAL, ""),
    "occipital lobe": (OCCIPITAL, ""),
    "occipital regions": (OCCIPITAL, ""),
    "fusiform": (FUSIFORM, ""),
    "fusiform gyrus": (FUSIFORM, ""),
    "precuneus": (PRECUNEUS, ""),
    "frontal": (FRONTAL, ""),
    "frontal cortex": (FRONTAL, ""),
    "frontal regions": (FRONTAL, ""),
    "frontal lobe": (FRONTAL, ""),
    "frontal areas": (FRONTAL, ""),
    "superior frontal": (SFG, ""),
    "superior frontal gyrus": (SFG, ""),
    "superior frontal cortex": (SFG, ""),
    "superior frontal areas": (SFG, ""),
    "inferior frontal gyrus": (IFG, ""),
    "motor": (MOTOR, ""),
    "motor cortex": (MOTOR, ""),
    "motor areas": (MOTOR, ""),
    "supplementary motor area": (SMA, ""),
    "sma": (SMA, ""),
    "somatosensory": (SOMATOSENSORY, ""),
    "somatosensory cortex": (SOMATOSENSORY, ""),
    "somatosensory areas": (SOMATOSENSORY, ""),
    "somatosensory regions": (SOMATOSENSORY, ""),
    "sensorimotor": (SENSORIMOTOR, ""),
    "sensorimotor cortex": (SENSORIMOTOR, ""),
    "sensorimotor network": (SENSORIMOTOR, ""),
    "somatomotor areas": (SENSORIMOTOR, ""),
    "striatum": ("", "Caudate Putamen Accumbens"),
    "striatal": ("", "Caudate Putamen Accumbens"),
    "ventral striatum": ("", "Accumbens"),
    "caudate": ("", "Caudate"),
    "caudate nucleus": ("", "Caudate"),
    "basal ganglia": ("", "Caudate Putamen Pallidum Accumbens"),
    "cerebellum": ("", "Cerebellum"),
    "cerebellar": ("", "Cerebellum"),
    "brainstem": ("", "Brain-Stem"),
    "brain stem": ("", "Brain-Stem"),
    "default": (DMN, ""),
    "default mode": (DMN, ""),
    "default mode network": (DMN, ""),
    "dmn": (DMN, ""),
    "limbic regions": (PARAHIPPO, "Amygdala Hippocampus"),
    "limbic": (PARAHIPPO, "Amygdala Hippocampus"),
    "reward": ("OFC pOFC", "Caudate Accumbens"),
    "reward regions": ("OFC pOFC", "Caudate Accumbens"),
    "reward network": ("OFC pOFC", "Caudate Accumbens"),
    "reward processing networks": ("OFC pOFC", "Caudate Accumbens"),
    "working memory": (WORKING_MEMORY, ""),
    "working memory network": (WORKING_MEMORY, ""),
    "working memory areas": (WORKING_MEMORY, ""),
    "superior temporal gyrus": (STG, ""),
    "stg": (STG, ""),
}

# Disorder-term vocabulary that names no region; recognised so the parser can skip it.
NON_REGION_TERMS = ["somatization", "left", "right", "fa", "motion", "hope", "task", "white matter",
                    "tensor", "matter", "white", "superior", "inferior", "anterior", "lobe", "nucleus"]

POSITIVE = ["hyperconnectivity", "hyper connectivity", "hyperconnected", "increased", "increase",
            "elevated", "enhanced", "heightened", "augmented", "higher", "stronger", "greater"]
NEGATIVE = ["hypoconnectivity", "hypo connectivity", "hypoconnected", "reduced", "decreased",
            "decrease", "diminished", "attenuated", "weakened", "weaker", "lower", "lowered",
            "impaired"]


def build_lexicon(atlas):
    by_name = {r["name"]: r["id"] for r in atlas}
    terms = {}
    for term, (areas, subs) in REGION_TERMS.items():
        ids = []
        for a in areas.split():
            ids += [by_name[f"L_{a}"], by_name[f"R_{a}"]]
        for s in subs.split():
            if s == "Brain-Stem":
                ids.append(by_name[s])
                continue
            if s == "Cerebellum":
                s = "Cerebellum-Cortex"
            ids += [by_name[f"Left-{s}"], by_name[f"Right-{s}"]]
        terms[term] = sorted(set(ids))
    for t in NON_REGION_TERMS:
        terms.setdefault(t, [])
    return {"terms": dict(sorted(terms.items())), "positive_keywords": POSITIVE,
            "negative_keywords": NEGATIVE}


DISORDER_TERMS = {
    "Anxiety": "amygdala, prefrontal, insula, cingulate, thalamus, occipital, brainstem, somatization, dlpfc, orbitofrontal, left, acc, right, hippocampus, fa, fusiform gyrus, memory, precuneus, parahippocampal, motion, ofc, hope, frontal, task",
    "ODD": "reward, fa, cerebellum, white matter, tensor, matter, occipital, precuneus, white, cingulate, prefrontal, insula, frontal, motion, striatum, superior, right, motor, inferior, left, orbitofrontal, task, striatal, somatization",
    "ADHD": "cerebellum, precuneus, cingulate, occipital, insula, prefrontal, frontal, motor, inferior, right, striatal, superior, default, left, orbitofrontal, motion, task, reward, acc, sensorimotor, caudate, lobe, working memory, thalamus",
    "OCD": "thalamus, cingulate, frontal, ofc, fa, occipital, insula, striatal, white matter, right, left, cerebellum, acc, anterior, orbitofrontal, tensor, stg, nucleus, superior, task, lobe, matter, basal ganglia",
    "Conduct": "insula, dmn, fusiform, matter, occipital, precuneus, fusiform gyrus, thalamus, prefrontal, cingulate, sma, orbitofrontal, motion, amygdala, ofc, frontal, anterior, brainstem, cerebellum, default, right, superior, motor, default mode",
}

DISORDER_NAMES = {
    "Anxiety": "Anxiety",
    "ODD": "Oppositional Defiant Disorder",
    "ADHD": "Attention-Deficit/Hyperactivity Disorder",
    "OCD": "Obsessive-Compulsive Disorder",
    "Conduct": "Conduct Disorder",
}


def main():
    atlas = build_atlas()
    (DATA / "atlas_glasser379.json").write_text(json.dumps(atlas, indent=1) + "\n", encoding="utf-8")
    (DATA / "lexicon_glasser379.json").write_text(json.dumps(build_lexicon(atlas), indent=1) + "\n",
                                                  encoding="utf-8")
    terms = {k: {"name": DISORDER_NAMES[k], "terms": [t.strip() for t in v.split(",")]}
             for k, v in DISORDER_TERMS.items()}
    (DATA / "disorder_terms.json").write_text(json.dumps(terms, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
