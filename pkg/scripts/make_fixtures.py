"""Regenerate everything under fixtures/.

The committed cassettes were recorded against ``ScriptedResponder``, a
rule-based stand-in for a chat model, so the whole pipeline replays offline.
Run from the repository root:

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import hashlib
import re
import shutil
import sys
from pathlib import Path

import yaml

from kerap.cli import run as cli_run
from kerap.cohort import Cohort, synth_cohort, write_cohort
from kerap.config import PipelineConfig
from kerap.gateway import CompletionRequest, FunctionBackend, Mode
from kerap.pipeline import Pipeline
from kerap.prediction import REASK_SUFFIX, PatientVisit, Strategy

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "fixtures"

# ----------------------------------------------------------------------------- KG

ENTITIES = {
    "disease": [
        "Cognitive dysfunction", "Dementia", "Alzheimer disease", "Vascular dementia", "Stroke",
        "Ischemic stroke", "Subarachnoid hemorrhage", "Intracerebral hemorrhage", "Cerebrovascular disorder",
        "Atrial fibrillation", "Hypertension", "Diabetes mellitus", "Type 2 diabetes mellitus",
        "Hyperlipidemia", "Major depression", "Chronic kidney disease", "Kidney failure",
        "Glomerulonephritis", "Membranous glomerulonephritis", "Focal segmental glomerulosclerosis",
        "Diabetic nephropathy", "Diabetic retinopathy", "Angina pectoris", "Acute coronary syndrome",
        "Coronary atherosclerosis", "Heart failure", "Congestive heart failure", "Pneumonia",
        "Aspiration pneumonia", "Sepsis", "Urinary tract infection", "Anemia", "Obstructive sleep apnea",
        "Delirium", "Aphasia", "Hydrocephalus", "Cerebral vasospasm", "Traumatic brain injury", "Epilepsy",
        "Parkinson disease", "Migraine", "Cognitive impairment no dementia", "Polycystic kidney disease",
        "Nephrotic syndrome", "Gout",
    ],
    "drug": [
        "Curcumin", "Pravastatin", "Atorvastatin", "Simvastatin", "Metformin", "Haloperidol", "Tacrine",
        "Nimodipine", "Donepezil", "Memantine", "Aspirin", "Clopidogrel", "Warfarin", "Apixaban",
        "Lisinopril", "Losartan", "Insulin", "Ondansetron", "Docusate", "Acetaminophen-oxycodone",
        "Levetiracetam", "Sertraline", "Furosemide", "Erythropoietin", "Ibuprofen", "Lithium",
    ],
    "symptom": [
        "Memory impairment", "Executive dysfunction", "Confusion", "Headache", "Proteinuria", "Hematuria",
        "Edema", "Fatigue", "Dyspnea", "Cough", "Fever", "Heart murmur",
    ],
    "chemical": ["Lead", "Cadmium", "Mercury", "Benzene", "Dioxins", "Polychlorinated biphenyls"],
    "gene": ["APOE", "NOTCH3", "APOL1", "PKD1", "NPHS1", "UMOD"],
    "pathway": ["Neuroinflammation", "Amyloid beta clearance", "Renin-angiotensin system", "Oxidative stress"],
}
PREFIX = {"disease": "DIS", "drug": "DRG", "symptom": "SYM", "chemical": "CHM", "gene": "GEN", "pathway": "PWY"}

CD, CKD = "Cognitive dysfunction", "Chronic kidney disease"
TRIPLES = [
    # cognitive dysfunction, indicating side
    ("Curcumin", "Relates with", CD),
    ("Stroke", "Associates", CD),
    ("Ischemic stroke", "Associates", CD),
    ("Intracerebral hemorrhage", "Associates", CD),
    ("Subarachnoid hemorrhage", "Associates", CD),
    ("Cerebrovascular disorder", "Associates", CD),
    ("Vascular dementia", "Resembles", CD),
    ("Alzheimer disease", "Resembles", CD),
    (CD, "Presents", "Memory impairment"),
    (CD, "Presents", "Executive dysfunction"),
    (CD, "Presents", "Confusion"),
    ("Delirium", "Associates", CD),
    ("Aphasia", "Associates", CD),
    ("Hydrocephalus", "Causes", CD),
    ("Major depression", "Associates", CD),
    ("Traumatic brain injury", "Causes", CD),
    ("APOE", "Associates", CD),
    ("NOTCH3", "Associates", CD),
    ("Neuroinflammation", "Participates in", CD),
    ("Donepezil", "Treats", CD),
    ("Memantine", "Treats", CD),
    # cognitive dysfunction, excluding side
    ("Pravastatin", "Not treats", CD),
    ("Nimodipine", "Not associated with", CD),
    ("Metformin", "Not treats", CD),
    ("Haloperidol", "Not treats", CD),
    ("Tacrine", "Not treats", CD),
    ("Atorvastatin", "Not treats", CD),
    ("Simvastatin", "Not treats", CD),
    ("Lead", "Not associated with", CD),
    ("Cadmium", "Not associated with", CD),
    ("Mercury", "Not associated with", CD),
    ("Benzene", "Not associated with", CD),
    ("Dioxins", "Not associated with", CD),
    ("Polychlorinated biphenyls", "Not associated with", CD),
    ("Ondansetron", "Not associated with", CD),
    ("Docusate", "Not associated with", CD),
    # chronic kidney disease, indicating side
    ("Glomerulonephritis", "Associates", CKD),
    ("Membranous glomerulonephritis", "Resembles", CKD),
    ("Focal segmental glomerulosclerosis", "Resembles", CKD),
    ("Diabetes mellitus", "Causes", CKD),
    ("Type 2 diabetes mellitus", "Causes", CKD),
    ("Diabetic nephropathy", "Causes", CKD),
    ("Diabetic retinopathy", "Associates", CKD),
    ("Angina pectoris", "Associates", CKD),
    ("Acute coronary syndrome", "Associates", CKD),
    ("Coronary atherosclerosis", "Associates", CKD),
    ("Heart murmur", "Associates", CKD),
    (CKD, "Presents", "Proteinuria"),
    (CKD, "Presents", "Edema"),
    ("Polycystic kidney disease", "Causes", CKD),
    ("APOL1", "Associates", CKD),
    ("UMOD", "Associates", CKD),
    ("Renin-angiotensin system", "Participates in", CKD),
    ("Erythropoietin", "Treats", "Anemia"),
    (CKD, "Causes", "Anemia"),
    ("Losartan", "Palliates", CKD),
    # chronic kidney disease, excluding side
    ("Migraine", "Not associated with", CKD),
    ("Pneumonia", "Not associated with", CKD),
    ("Ibuprofen", "Contraindicated for", CKD),
    ("Lithium", "Contraindicated for", CKD),
    ("Epilepsy", "Not associated with", CKD),
    # background relations
    ("Aspirin", "Treats", "Ischemic stroke"),
    ("Clopidogrel", "Treats", "Ischemic stroke"),
    ("Warfarin", "Treats", "Atrial fibrillation"),
    ("Apixaban", "Treats", "Atrial fibrillation"),
    ("Atrial fibrillation", "Causes", "Ischemic stroke"),
    ("Hypertension", "Causes", "Stroke"),
    ("Lisinopril", "Treats", "Hypertension"),
    ("Losartan", "Treats", "Hypertension"),
    ("Insulin", "Treats", "Diabetes mellitus"),
    ("Metformin", "Treats", "Type 2 diabetes mellitus"),
    ("Furosemide", "Treats", "Congestive heart failure"),
    ("Heart failure", "Resembles", "Congestive heart failure"),
    ("Aspiration pneumonia", "Resembles", "Pneumonia"),
    ("Pneumonia", "Presents", "Cough"),
    ("Pneumonia", "Presents", "Fever"),
    ("Sepsis", "Presents", "Fever"),
    ("Levetiracetam", "Treats", "Epilepsy"),
    ("Sertraline", "Treats", "Major depression"),
    ("Subarachnoid hemorrhage", "Causes", "Cerebral vasospasm"),
    ("Nimodipine", "Treats", "Cerebral vasospasm"),
    ("Subarachnoid hemorrhage", "Presents", "Headache"),
    ("Oxidative stress", "Participates in", "Parkinson disease"),
    ("Amyloid beta clearance", "Participates in", "Alzheimer disease"),
    ("PKD1", "Associates", "Polycystic kidney disease"),
    ("NPHS1", "Associates", "Nephrotic syndrome"),
    ("Nephrotic syndrome", "Presents", "Proteinuria"),
    ("Glomerulonephritis", "Presents", "Hematuria"),
    ("Obstructive sleep apnea", "Presents", "Fatigue"),
    ("Heart failure", "Presents", "Dyspnea"),
    ("Gout", "Not associated with", "Migraine"),
]

LEXICON = {
    "negative_markers": ["not", "no_", "contraindicat", "rules out", "unrelated"],
    "overrides": {"Annotates": "positive", "Denotes": "positive", "Excludes": "negative", "Lacks evidence for": "negative"},
}

LEXICON_CASES = [
    ("Treats", "positive"), ("Palliates", "positive"), ("Relates with", "positive"), ("Associates", "positive"),
    ("Causes", "positive"), ("Presents", "positive"), ("Resembles", "positive"), ("Binds", "positive"),
    ("Interacts with", "positive"), ("Upregulates", "positive"), ("Downregulates", "positive"),
    ("Inhibits", "positive"), ("Activates", "positive"), ("Expresses", "positive"),
    ("Participates in", "positive"), ("Includes", "positive"), ("Is a", "positive"),
    ("Risk factor for", "positive"), ("Biomarker of", "positive"), ("Prevents", "positive"),
    ("Alleviates", "positive"), ("Localizes", "positive"), ("Regulates", "positive"),
    ("Drug target of", "positive"), ("Co-occurs with", "positive"), ("Symptom of", "positive"),
    ("Complication of", "positive"), ("Increases risk of", "positive"), ("Side effect of", "positive"),
    ("Annotates", "positive"), ("Denotes", "positive"), ("ANNOTATES", "positive"), ("Similar to", "positive"),
    ("Not treats", "negative"), ("Not associated with", "negative"), ("NOT_ASSOCIATES", "negative"),
    ("No_effect", "negative"), ("NO_ASSOCIATION", "negative"), ("Contraindicated for", "negative"),
    ("Contraindication", "negative"), ("Rules out", "negative"), ("rules out", "negative"),
    ("Does not cause", "negative"), ("Not a risk factor for", "negative"), ("Unrelated to", "negative"),
    ("Excludes", "negative"), ("EXCLUDES", "negative"), ("Lacks evidence for", "negative"),
    ("Cannot treat", "negative"), ("not_treats", "negative"),
]

PRICING = {"models": {"gpt-4o-mini": {"input_per_million": 0.15, "output_per_million": 0.60}}}

PSCI_VOCAB = [
    "Cerebral infarction", "Ischemic stroke", "Atrial fibrillation", "Essential hypertension",
    "Hyperlipidemia", "aspirin", "clopidogrel", "atorvastatin", "lisinopril", "Dysphagia",
    "Physical therapy", "Speech therapy", "Head CT", "Urinary tract infection", "ondansetron",
    "docusate", "heparin", "insulin", "metoprolol", "Gastroesophageal reflux disease", "Constipation",
    "Hypokalemia", "Obesity", "Tobacco use", "Carotid ultrasound", "Neurology Service",
    "Rehabilitation Service", "nimodipine", "pravastatin", "metformin", "Anxiety", "Hemiparesis",
    "Nontraumatic subarachnoid hemorrhage", "Other cerebrovascular diseases", "acetaminophen-oxycodone",
    "Type 2 diabetes mellitus", "Coronary atherosclerosis", "Hypothyroidism", "levothyroxine", "simvastatin",
]
PSCI_RISK = [
    "Memory impairment", "Vascular dementia", "Executive dysfunction", "Delirium", "Aphasia",
    "Obstructive hydrocephalus", "Major depression", "Confusion", "Alzheimer disease", "APOE e4 carrier",
]

CASE_A = PatientVisit(
    "case-a",
    (
        "Nontraumatic subarachnoid hemorrhage", "Other cerebrovascular diseases",
        "Other functional intestinal disorders", "acetaminophen-oxycodone", "docusate", "nimodipine",
        "ondansetron", "pravastatin",
    ),
    False,
)
CASE_B = PatientVisit(
    "case-b",
    (
        "Nephritis and nephropathy, not specified as acute or chronic, with lesion of proliferative glomerulonephritis",
        "Angina decubitus",
        "Diabetes mellitus without mention of complication, type II or unspecified type, not stated as uncontrolled",
        "Background diabetic retinopathy", "Cardiovascular Surgery Service",
    ),
    True,
)

# ----------------------------------------------------------------------------- responder

_STOP = {
    "other", "with", "without", "mention", "specified", "unspecified", "type", "stated", "acute", "chronic",
    "disease", "diseases", "disorder", "disorders", "syndrome", "service", "lesion", "background", "that",
    "these", "them", "none", "include", "includes", "factors", "their", "from", "this", "knowledge", "graph",
    "relations", "linked", "link", "indicates", "indicate", "does", "into", "level", "care", "therapy",
    "evidence", "unrelated", "inclusion", "criteria", "patient", "record", "risk", "uncontrolled", "complication",
}
_ALARM = {
    "stroke", "infarction", "hemorrhage", "cerebrovascular", "dementia", "memory", "hemiparesis", "aphasia",
    "delirium", "confusion", "nephropathy", "glomerulonephritis", "diabetes", "hypertension", "atherosclerosis",
}


def _words(text: str) -> set[str]:
    return {w for w in re.findall(r"[a-z0-9]+", text.lower()) if len(w) >= 4 and w not in _STOP}


def _section(text: str, label: str, last: bool = False) -> str:
    hits = [m.end() for m in re.finditer(re.escape(label), text)]
    if not hits:
        return ""
    start = hits[-1] if last else hits[0]
    return text[start:].split("\n\n", 1)[0].strip()


def _ehr(text: str) -> list[str]:
    line = _section(text, "EHR Data: ")
    return [a.strip() for a in line.rstrip(".").split("; ") if a.strip()]


def _hits(attrs: list[str], summary: str) -> list[str]:
    vocab = _words(summary)
    return [a for a in attrs if _words(a) & vocab]


def _alarming(attrs: list[str]) -> list[str]:
    return [a for a in attrs if _words(a) & _ALARM]


def _say(yes: bool, why: str) -> str:
    return f"Prediction: {'YES' if yes else 'NO'}\nReasoning: {why}"


def _join(items: list[str]) -> str:
    return ", ".join(items) if items else "nothing specific"


class ScriptedResponder:
    """Deterministic rule-based replies keyed on the structure of each prompt."""

    aliases = {"post-stroke cognitive impairment": "cognitive dysfunction", "psci": "cognitive dysfunction"}

    def __call__(self, req: CompletionRequest) -> str:
        user = req.messages[-1].content
        system = req.messages[0].content
        if "entity-linking" in system:
            return self._link(req)
        if "knowledge summarizer" in system:
            return self._summarize(user)
        return self._predict(user)

    def _link(self, req: CompletionRequest) -> str:
        prompt = req.messages[1].content
        mention = re.search(r'Disease mention: "(.*)"', prompt).group(1).lower()
        cands = re.findall(r"^(\d+)\. (.+)$", prompt, re.MULTILINE)
        target = self.aliases.get(mention, mention)
        for num, name in cands:
            if name.lower() == target:
                return num
        return "1"

    def _summarize(self, user: str) -> str:
        entity = re.search(r'Knowledge-graph entity: "(.*)"', user).group(1)
        others = []
        for h, p, t in re.findall(r"^\((.*?), (.*?), (.*?)\)$", user, re.MULTILINE):
            other = t if h == entity else h
            if other not in others:
                others.append(other)
        if "rule out" in user:
            return (
                f"Factors unrelated to the target condition: {_join(others)}. The graph records no indicating "
                "link for these, so their presence should not raise the estimated risk."
            )
        return (
            f"Key factors for the target condition: {_join(others)}. Each is linked to it in the graph as a "
            "cause, associated condition, presentation or treatment."
        )

    def _predict(self, user: str) -> str:
        if user.endswith(REASK_SUFFIX):
            return "NO" if int(hashlib.sha256(user.encode()).hexdigest(), 16) % 2 else "YES"
        if user.startswith("Stage I prompt:"):
            attrs = _ehr(user)
            if "Guidance from KG: " in user:
                pos = _hits(attrs, _section(user, "Guidance from KG: "))
                neg = _hits(attrs, _section(user, "Guidance from KG: ", last=True))
                yes = len(pos) - len(neg) >= 2
                return _say(yes, f"Indicating findings: {_join(pos)}. Findings the guidance marks as unrelated: {_join(neg)}.")
            alarm = _alarming(attrs)
            return _say(len(alarm) >= 2, f"On reflection the concerning findings are {_join(alarm)}.")
        attrs = _ehr(user)
        if "(factors indicating the disease)" in user:
            pos = _hits(attrs, _section(user, "(factors indicating the disease): "))
            neg = _hits(attrs, _section(user, "(factors unrelated to or ruling out the disease): "))
            return _say(len(pos) - len(neg) >= 1, f"Supporting: {_join(pos)}. Unrelated: {_join(neg)}.")
        if "Guidance from KG: " in user:
            pos = _hits(attrs, _section(user, "Guidance from KG: "))
            return _say(bool(pos), f"Findings matching the guidance: {_join(pos)}.")
        alarm = _alarming(attrs)
        if "Work through these steps" in user:
            return _say(bool(alarm) or len(attrs) > 6, f"Step 1 lists {len(attrs)} findings; risk factors: {_join(alarm)}.")
        if int(hashlib.sha256(user.encode()).hexdigest(), 16) % 40 == 0:
            return "The record alone is not enough to judge this."
        return _say(bool(alarm) or len(attrs) > 5, f"Concerning findings: {_join(alarm)}.")


# ----------------------------------------------------------------------------- writers


def write_kg(kg_dir: Path) -> None:
    kg_dir.mkdir(parents=True, exist_ok=True)
    ids = {}
    with open(kg_dir / "entities.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# synthetic biomedical KG for offline fixtures\nid\tname\tcategory\n")
        for cat, names in ENTITIES.items():
            for i, name in enumerate(names, 1):
                ids[name] = f"{PREFIX[cat]}:{i:04d}"
                fh.write(f"{ids[name]}\t{name}\t{cat}\n")
    with open(kg_dir / "triples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("head\tpredicate\ttail\n")
        for h, p, t in TRIPLES:
            fh.write(f"{ids[h]}\t{p}\t{ids[t]}\n")


def write_yaml(path: Path, data) -> None:
    path.write_text(yaml.safe_dump(data, sort_keys=False, allow_unicode=True), encoding="utf-8")


def config_dict(cassette: str) -> dict:
    return {
        "kg": {
            "entities": "kg/entities.tsv",
            "triples": "kg/triples.tsv",
            "categories": list(ENTITIES),
        },
        "lexicon": "lexicon.yaml",
        "embedding": {"provider": "hash", "dimension": 768},
        "linker": {"candidate_count": 10},
        "retrieval": {"cap": 200},
        "llm": {"model": "gpt-4o-mini", "temperature": 0.0, "max_tokens": 512},
        "pricing": "pricing.yaml",
        "gateway": {"mode": "replay", "cassette": cassette},
        "parallelism": 4,
        "seed": 0,
        "memory_budget_mb": 512,
    }


def record(config: Path, cohorts: list[tuple[Cohort, list[Strategy]]], cassette: Path) -> None:
    if cassette.exists():
        cassette.unlink()
    cfg = PipelineConfig.load(config).with_overrides(mode=Mode.RECORD, cassette=cassette)
    pipe = Pipeline.from_config(cfg, inner_backend=FunctionBackend(ScriptedResponder(), seconds_per_token=0.004))
    try:
        for cohort, strategies in cohorts:
            for s in strategies:
                pipe.predict_cohort(cohort, s)
    finally:
        pipe.close()


def main() -> int:
    FIX.mkdir(exist_ok=True)
    write_kg(FIX / "kg")
    write_yaml(FIX / "lexicon.yaml", LEXICON)
    write_yaml(FIX / "pricing.yaml", PRICING)
    (FIX / "lexicon_cases.tsv").write_text(
        "predicate\texpected\n" + "".join(f"{p}\t{e}\n" for p, e in LEXICON_CASES), encoding="utf-8"
    )
    vocab = FIX / "vocab"
    vocab.mkdir(exist_ok=True)
    (vocab / "psci_attributes.txt").write_text("\n".join(PSCI_VOCAB) + "\n", encoding="utf-8")
    (vocab / "psci_risk.txt").write_text("\n".join(PSCI_RISK) + "\n", encoding="utf-8")
    write_yaml(FIX / "config.yaml", config_dict("cassettes/psci_200.jsonl"))
    write_yaml(FIX / "config.cases.yaml", config_dict("cassettes/cases.jsonl"))

    cohorts = FIX / "cohorts"
    cohorts.mkdir(exist_ok=True)
    psci = synth_cohort(0, 200, 0.2230, PSCI_VOCAB, disease="Post-stroke cognitive impairment", risk_vocab=PSCI_RISK)
    write_cohort(psci, cohorts / "psci_200.jsonl")
    case_a = Cohort("Post-stroke cognitive impairment", (CASE_A,))
    case_b = Cohort("Chronic kidney disease", (CASE_B,))
    write_cohort(case_a, cohorts / "case_a.jsonl")
    write_cohort(case_b, cohorts / "case_b.jsonl")

    (FIX / "cassettes").mkdir(exist_ok=True)
    record(FIX / "config.yaml", [(psci, list(Strategy))], FIX / "cassettes" / "psci_200.jsonl")
    record(
        FIX / "config.cases.yaml",
        [(case_a, list(Strategy)), (case_b, list(Strategy))],
        FIX / "cassettes" / "cases.jsonl",
    )

    golden = FIX / "golden"
    if golden.exists():
        shutil.rmtree(golden)
    code = cli_run(
        [
            "--log-level", "WARNING", "evaluate", "--config", str(FIX / "config.yaml"),
            "--cohort", str(cohorts / "psci_200.jsonl"), "--strategy", "all", "--runs", "5",
            "--mode", "replay", "--out-dir", str(golden),
        ]
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
