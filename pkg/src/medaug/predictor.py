"""Sequential medication prediction over fused code embeddings.

Every visit becomes two vectors: the mean of its diagnosis rows and the
mean of its medication rows, each concatenated across the available
sources (ontology-augmented, relation-augmented, supervised). A diagnosis
GRU reads visits 1..t, a medication GRU reads visits 1..t-1, and a linear
patient representation of both final states plus the current diagnosis
vector feeds an elementwise-sigmoid output over all medications.

Codes share one joint index: diagnosis ``i`` is row ``i`` and medication
``j`` is row ``n_diagnoses + j`` of every table.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics as nx
from .encoders import uniform_table
from .exceptions import ConfigError, ContractError, CoverageError, DimensionError, TrainingError
from .metrics import EvalRecord, evaluate
from .optim import DEFAULT_LEARNING_RATE, Adam
from .validation import check_positive

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


@dataclass
class FusionTables:
    """Pretrained, frozen code tables over the joint code index.

    ``ontology`` and ``relation`` may be ``None`` when a variant drops them.
    """

    n_diagnoses: int
    n_medications: int
    ontology: np.ndarray = None
    relation: np.ndarray = None

    def __post_init__(self):
        for name in ("ontology", "relation"):
            table = getattr(self, name)
            if table is None:
                continue
            table = np.asarray(table, dtype=np.float64)
            if table.ndim != 2 or table.shape[0] != self.n_codes:
                raise CoverageError(f"{name} table has {table.shape[0] if table.ndim == 2 else '?'} rows for {self.n_codes} codes")
            if not np.all(np.isfinite(table)):
                raise ContractError(f"{name} table has non-finite entries")
            table.setflags(write=False)
            setattr(self, name, table)

    @property
    def n_codes(self):
        return self.n_diagnoses + self.n_medications

    def fixed(self):
        """``[O | H]`` over the joint index (possibly zero columns)."""
        parts = [t for t in (self.ontology, self.relation) if t is not None]
        if not parts:
            return np.zeros((self.n_codes, 0))
        return np.concatenate(parts, axis=1)

    @property
    def fixed_dim(self):
        return sum(t.shape[1] for t in (self.ontology, self.relation) if t is not None)


@dataclass(frozen=True)
class VisitVector:
    diagnosis: np.ndarray
    medication: np.ndarray


def averaging_matrix(code_sets, n_codes, offset=0):
    """Rows average the listed codes: ``M[r, offset + c] = 1/|codes_r|``; empty sets give zero rows."""
    m = np.zeros((len(code_sets), n_codes))
    for r, codes in enumerate(code_sets):
        codes = sorted(set(codes))
        if codes:
            m[r, [offset + c for c in codes]] = 1.0 / len(codes)
    return m


def fuse_visit(visit, tables, supervised):
    """Per-source means over a visit's codes, concatenated as [O, H, E]."""
    supervised = np.asarray(supervised, dtype=np.float64)
    if supervised.shape[0] != tables.n_codes:
        raise CoverageError(f"supervised table has {supervised.shape[0]} rows for {tables.n_codes} codes")
    for c in visit.diagnoses:
        if not 0 <= c < tables.n_diagnoses:
            raise CoverageError("diagnosis index outside the tables", [c])
    for c in visit.medications:
        if not 0 <= c < tables.n_medications:
            raise CoverageError("medication index outside the tables", [c])
    full = np.concatenate([tables.fixed(), supervised], axis=1)
    d = averaging_matrix([visit.diagnoses], tables.n_codes) @ full
    m = averaging_matrix([visit.medications], tables.n_codes, tables.n_diagnoses) @ full
    return VisitVector(d[0], m[0])


class GRUParams:
    """Gated recurrent unit; gate blocks ordered reset, update, candidate."""

    def __init__(self, in_dim, hidden_dim, rng, prefix):
        bound = 1.0 / math.sqrt(hidden_dim)
        self.hidden_dim = hidden_dim
        self.w_input = nx.parameter(rng.uniform(-bound, bound, (in_dim, 3 * hidden_dim)), f"{prefix}.w_input")
        self.w_hidden = nx.parameter(rng.uniform(-bound, bound, (hidden_dim, 3 * hidden_dim)), f"{prefix}.w_hidden")
        self.b_input = nx.parameter(rng.uniform(-bound, bound, (1, 3 * hidden_dim)), f"{prefix}.b_input")
        self.b_hidden = nx.parameter(rng.uniform(-bound, bound, (1, 3 * hidden_dim)), f"{prefix}.b_hidden")

    def named_parameters(self):
        return {p.name: p for p in (self.w_input, self.w_hidden, self.b_input, self.b_hidden)}


def gru_sequence(params, inputs):
    """Run the GRU over the rows of ``inputs`` from a zero state; returns all hidden states stacked."""
    inputs = nx.constant(inputs)
    h_dim = params.hidden_dim
    projected = nx.add(nx.matmul(inputs, params.w_input), params.b_input)
    h = nx.constant(np.zeros((1, h_dim)))
    states = []
    for t in range(inputs.shape[0]):
        x = nx.gather_rows(projected, [t])
        hh = nx.add(nx.matmul(h, params.w_hidden), params.b_hidden)
        r = nx.sigmoid(nx.add(nx.slice_cols(x, 0, h_dim), nx.slice_cols(hh, 0, h_dim)))
        z = nx.sigmoid(nx.add(nx.slice_cols(x, h_dim, 2 * h_dim), nx.slice_cols(hh, h_dim, 2 * h_dim)))
        n = nx.tanh(nx.add(nx.slice_cols(x, 2 * h_dim, 3 * h_dim), nx.mul(r, nx.slice_cols(hh, 2 * h_dim, 3 * h_dim))))
        h = nx.add(nx.mul(nx.sub(1.0, z), n), nx.mul(z, h))
        states.append(h)
    return nx.concat(states, axis=0)


def predict_probabilities(h_medication, h_diagnosis, x_diagnosis, w_patient, w_output, b_output):
    """``sigmoid(W_O (W_P [h_m, h_d, x_d]) + b_o)``; rows are target visits."""
    patient = nx.concat([h_medication, h_diagnosis, x_diagnosis], axis=1)
    rep = nx.matmul(patient, w_patient)
    return nx.sigmoid(nx.add(nx.matmul(rep, w_output), b_output))


def bce_loss(probabilities, truth):
    """Mean binary cross-entropy over all entries, probabilities clamped to [eps, 1-eps]."""
    p = nx.clip(nx.constant(probabilities), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(truth, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError("bce_loss", p.shape, y.shape)
    ll = nx.add(nx.mul(y, nx.log(p)), nx.mul(1.0 - y, nx.log(nx.sub(1.0, p))))
    return nx.neg(nx.mean_all(ll))


@dataclass
class _Encoded:
    """Per-patient constants reused across epochs."""

    fixed_dx: np.ndarray
    fixed_rx: np.ndarray
    avg_dx: np.ndarray
    avg_rx: np.ndarray
    targets: np.ndarray
    labels: np.ndarray


class MedicationPredictor(BaseEstimator, ClassifierMixin):
    """Two-channel recurrent medication predictor.

    ``fit(patients, tables=..., validation=...)`` trains the supervised
    code table, both GRUs and the output layers with Adam, one patient per
    step. Pretrained tables stay frozen. When validation patients are
    given, the parameters with the best validation Jaccard are kept.

    ``use_ontology`` / ``use_relation`` select which pretrained tables enter
    the visit vectors.
    """

    def __init__(
        self,
        embedding_dim=64,
        hidden_dim=256,
        patient_dim=64,
        use_ontology=True,
        use_relation=True,
        epochs=40,
        learning_rate=DEFAULT_LEARNING_RATE,
        threshold=0.5,
        pooled_prauc=False,
        random_state=0,
    ):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.patient_dim = patient_dim
        self.use_ontology = use_ontology
        self.use_relation = use_relation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.pooled_prauc = pooled_prauc
        self.random_state = random_state

    # -- setup ---------------------------------------------------------------

    def _select_tables(self, tables):
        return FusionTables(
            tables.n_diagnoses,
            tables.n_medications,
            tables.ontology if self.use_ontology else None,
            tables.relation if self.use_relation else None,
        )

    def _init_params(self, tables):
        for name in ("embedding_dim", "hidden_dim", "patient_dim"):
            check_positive(name, getattr(self, name))
        emb_seq, rnn_m_seq, rnn_d_seq, out_seq, self._order_seq = np.random.SeedSequence(self.random_state).spawn(5)
        visit_dim = tables.fixed_dim + self.embedding_dim
        self.visit_dim_ = visit_dim
        self.supervised_ = nx.parameter(uniform_table(np.random.default_rng(emb_seq), tables.n_codes, self.embedding_dim), "supervised")
        self.rnn_medication_ = GRUParams(visit_dim, self.hidden_dim, np.random.default_rng(rnn_m_seq), "rnn_medication")
        self.rnn_diagnosis_ = GRUParams(visit_dim, self.hidden_dim, np.random.default_rng(rnn_d_seq), "rnn_diagnosis")
        rng = np.random.default_rng(out_seq)
        in_p = 2 * self.hidden_dim + visit_dim
        self.w_patient_ = nx.parameter(rng.uniform(-1, 1, (in_p, self.patient_dim)) / math.sqrt(in_p), "w_patient")
        self.w_output_ = nx.parameter(rng.uniform(-1, 1, (self.patient_dim, tables.n_medications)) / math.sqrt(self.patient_dim), "w_output")
        self.b_output_ = nx.parameter(np.zeros((1, tables.n_medications)), "b_output")

    def named_parameters(self):
        check_is_fitted(self, "supervised_")
        out = {"supervised": self.supervised_}
        out.update(self.rnn_medication_.named_parameters())
        out.update(self.rnn_diagnosis_.named_parameters())
        for p in (self.w_patient_, self.w_output_, self.b_output_):
            out[p.name] = p
        return out

    def state_dict(self):
        return {k: p.value.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        if set(state) != set(params):
            raise ContractError(f"checkpoint parameters {sorted(set(state) ^ set(params))} do not match the model")
        for k, p in params.items():
            if state[k].shape != p.value.shape:
                raise DimensionError(f"load_state_dict[{k}]", p.value.shape, state[k].shape)
            p.value[...] = state[k]

    def initialize(self, tables):
        """Set up fresh parameters for ``tables`` without training (used to load checkpoints)."""
        self.tables_ = self._select_tables(tables)
        self._fixed = self.tables_.fixed()
        self._init_params(self.tables_)
        return self

    # -- forward ---------------------------------------------------------------

    def _encode_patient(self, patient):
        t = self.tables_
        visits = patient.visits
        for v in visits:
            bad = [c for c in v.diagnoses if not 0 <= c < t.n_diagnoses] + [t.n_diagnoses + c for c in v.medications if not 0 <= c < t.n_medications]
            if bad:
                raise CoverageError(f"patient {patient.id}: codes outside the tables", bad)
        avg_dx = averaging_matrix([v.diagnoses for v in visits], t.n_codes)
        avg_rx = averaging_matrix([v.medications for v in visits[:-1]], t.n_codes, t.n_diagnoses)
        targets = np.array([i for i in range(1, len(visits)) if visits[i].is_target], dtype=np.intp)
        labels = np.zeros((len(targets), t.n_medications))
        for r, i in enumerate(targets):
            labels[r, list(visits[i].medications)] = 1.0
        return _Encoded(avg_dx @ self._fixed, avg_rx @ self._fixed, avg_dx, avg_rx, targets, labels)

    def _forward(self, enc):
        """Probabilities (n_targets x n_medications) for one encoded patient."""
        x_dx = nx.concat([nx.constant(enc.fixed_dx), nx.matmul(nx.constant(enc.avg_dx), self.supervised_)], axis=1)
        x_rx = nx.concat([nx.constant(enc.fixed_rx), nx.matmul(nx.constant(enc.avg_rx), self.supervised_)], axis=1)
        h_dx = gru_sequence(self.rnn_diagnosis_, x_dx)
        h_rx = gru_sequence(self.rnn_medication_, x_rx)
        t = enc.targets
        return predict_probabilities(
            nx.gather_rows(h_rx, t - 1),
            nx.gather_rows(h_dx, t),
            nx.gather_rows(x_dx, t),
            self.w_patient_,
            self.w_output_,
            self.b_output_,
        )

    def patient_loss(self, patient):
        """Mean BCE over a patient's target visits (used for gradient checks)."""
        enc = self._encode_patient(patient)
        if len(enc.targets) == 0:
            raise ContractError(f"patient {patient.id} has no target visit")
        return bce_loss(self._forward(enc), enc.labels)

    def encode_history(self, patient, t):
        """Final hidden states ``(h_medication, h_diagnosis)`` for target visit ``t`` (1-based, t >= 2)."""
        check_is_fitted(self, "supervised_")
        if not 2 <= t <= len(patient.visits):
            raise ContractError(f"visit index {t} outside 2..{len(patient.visits)}")
        enc = self._encode_patient(patient)
        x_dx = np.concatenate([enc.fixed_dx, enc.avg_dx @ self.supervised_.value], axis=1)
        x_rx = np.concatenate([enc.fixed_rx, enc.avg_rx @ self.supervised_.value], axis=1)
        h_dx = gru_sequence(self.rnn_diagnosis_, x_dx[:t]).value
        h_rx = gru_sequence(self.rnn_medication_, x_rx[: t - 1]).value
        return h_rx[-1], h_dx[-1]

    # -- estimator API -------------------------------------------------------------

    def fit(self, patients, y=None, tables=None, validation=None):
        if tables is None:
            raise ContractError("MedicationPredictor.fit needs tables=")
        check_positive("epochs", self.epochs)
        self.initialize(tables)
        train = [(p, self._encode_patient(p)) for p in patients]
        train = [(p, e) for p, e in train if len(e.targets)]
        if not train:
            raise ConfigError("training split has no patient with a target visit")
        val_encoded = [(p, self._encode_patient(p)) for p in validation] if validation else None

        params = self.named_parameters()
        opt = Adam(params, learning_rate=self.learning_rate)
        order_rng = np.random.default_rng(self._order_seq)
        self.loss_curve_ = []
        self.metrics_log_ = []
        best, best_score = None, -math.inf
        for epoch in range(1, self.epochs + 1):
            total = 0.0
            for idx in order_rng.permutation(len(train)):
                patient, enc = train[idx]
                loss = bce_loss(self._forward(enc), enc.labels)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch} (patient {patient.id})")
                total += value
                opt.zero_grad()
                nx.backward(loss)
                opt.step()
            self.loss_curve_.append(total / len(train))
            if val_encoded is not None:
                m = evaluate(self._records(val_encoded), self.pooled_prauc)
                self.metrics_log_.append((epoch, "validation", m["jaccard"], m["f1"], m["prauc"]))
                logger.info("epoch %d loss %.5f val jaccard %.4f", epoch, self.loss_curve_[-1], m["jaccard"])
                if m["jaccard"] > best_score:
                    best_score, best = m["jaccard"], self.state_dict()
        if best is not None:
            self.load_state_dict(best)
            self.best_validation_jaccard_ = best_score
        return self

    def _records(self, encoded):
        out = []
        for _, enc in encoded:
            if len(enc.targets) == 0:
                continue
            probs = self._forward(enc).value
            for row, labels in zip(probs, enc.labels):
                out.append(EvalRecord.from_scores(np.flatnonzero(labels), row, self.threshold))
        return out

    def predict_proba(self, patients):
        """One ``(n_targets, n_medications)`` array per patient (visits 2..T with medications)."""
        check_is_fitted(self, "supervised_")
        out = []
        for p in patients:
            enc = self._encode_patient(p)
            out.append(self._forward(enc).value if len(enc.targets) else np.zeros((0, self.tables_.n_medications)))
        return out

    def predict(self, patients):
        return [(p > self.threshold).astype(int) for p in self.predict_proba(patients)]

    def evaluation_records(self, patients):
        check_is_fitted(self, "supervised_")
        return self._records([(p, self._encode_patient(p)) for p in patients])

    def evaluate(self, patients):
        return evaluate(self.evaluation_records(patients), self.pooled_prauc)

    def score(self, patients, y=None):
        return self.evaluate(patients)["jaccard"]
