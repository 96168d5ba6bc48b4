"""Feature groups, embedding lookup, and sequence attention pooling.

Input features fall into four groups per entity: user profile fields,
behavior sequences (one per entity type), entity-shared fields, and
entity-specific fields. A sample embeds to the column vector

    full = [user || seq || shared || spec]

where each group is the ordered concatenation of per-field embedding
columns and `seq` is the concatenation of two attention-pooled vectors,
one per behavior-sequence type. User, shared, and sequence-encoder
parameters are a single set shared by both entities; only the specific
tables differ.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ValidationError
from . import tensorgrad as tg
from .config import read_kv_file, write_kv_file

SOURCE = "source"
TARGET = "target"
ENTITIES = (SOURCE, TARGET)


@dataclass(frozen=True)
class FeatureSchema:
    """Field declarations for both entities plus embedding dims."""

    user_fields: tuple  # ((name, vocab), ...)
    shared_fields: tuple
    spec_fields: dict  # entity -> ((name, vocab), ...)
    seq_len: int
    d_e: int
    d_attn: int

    def __post_init__(self):
        object.__setattr__(self, "user_fields", tuple(map(tuple, self.user_fields)))
        object.__setattr__(self, "shared_fields", tuple(map(tuple, self.shared_fields)))
        object.__setattr__(self, "spec_fields", {
            e: tuple(map(tuple, fs)) for e, fs in self.spec_fields.items()})
        for entity in ENTITIES:
            if entity not in self.spec_fields:
                raise ValidationError(f"schema missing spec fields for '{entity}'")
            if len(self.spec_fields[entity]) < 1:
                raise ValidationError(
                    f"'{entity}' needs at least one specific field")
        if not self.user_fields or not self.shared_fields:
            raise ValidationError("schema needs user and shared fields")
        for name, vocab in self.all_fields():
            if vocab < 1:
                raise ValidationError(f"field '{name}' has vocab {vocab} < 1")
        if self.seq_len < 0 or self.d_e < 1 or self.d_attn < 1:
            raise ValidationError("seq_len/d_e/d_attn out of range")

    def all_fields(self):
        out = list(self.user_fields) + list(self.shared_fields)
        for entity in ENTITIES:
            out.extend(self.spec_fields[entity])
        return out

    @property
    def n_user(self):
        return len(self.user_fields)

    @property
    def n_shared(self):
        return len(self.shared_fields)

    def n_spec(self, entity):
        return len(self.spec_fields[entity])

    @property
    def d_user(self):
        return self.n_user * self.d_e

    @property
    def d_seq(self):
        return 2 * self.d_attn

    @property
    def d_shared(self):
        return self.n_shared * self.d_e

    def d_spec(self, entity):
        return self.n_spec(entity) * self.d_e

    def d_full(self, entity):
        return self.d_user + self.d_seq + self.d_shared + self.d_spec(entity)

    def to_dict(self):
        return {
            "schema.user_fields": [list(f) for f in self.user_fields],
            "schema.shared_fields": [list(f) for f in self.shared_fields],
            "schema.spec_fields.source": [list(f) for f in self.spec_fields[SOURCE]],
            "schema.spec_fields.target": [list(f) for f in self.spec_fields[TARGET]],
            "schema.seq_len": self.seq_len,
            "schema.d_e": self.d_e,
            "schema.d_attn": self.d_attn,
        }

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path):
        write_kv_file(path, self.to_dict())

    @classmethod
    def load(cls, path):
        kv = read_kv_file(path)
        try:
            return cls(
                user_fields=kv["schema.user_fields"],
                shared_fields=kv["schema.shared_fields"],
                spec_fields={
                    SOURCE: kv["schema.spec_fields.source"],
                    TARGET: kv["schema.spec_fields.target"],
                },
                seq_len=kv["schema.seq_len"],
                d_e=kv["schema.d_e"],
                d_attn=kv["schema.d_attn"],
            )
        except KeyError as exc:
            raise ValidationError(f"schema file {path} missing key {exc}")


@dataclass(frozen=True)
class EncodedSample:
    """One integer-encoded impression."""

    entity: str
    user_ids: tuple
    shared_ids: tuple
    spec_ids: tuple
    seq_source: tuple  # up to L id-vectors over shared fields
    seq_target: tuple
    label: int
    user: int = 0  # generator's user index; carried for grouped metrics

    def validate(self, schema):
        if self.entity not in ENTITIES:
            raise ValidationError(f"unknown entity '{self.entity}'")
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0/1, got {self.label}")
        _check_ids("user", self.user_ids, schema.user_fields)
        _check_ids("shared", self.shared_ids, schema.shared_fields)
        _check_ids(f"spec.{self.entity}", self.spec_ids,
                   schema.spec_fields[self.entity])
        for tag, seq in (("seq_source", self.seq_source),
                         ("seq_target", self.seq_target)):
            if len(seq) > schema.seq_len:
                raise ValidationError(
                    f"{tag} has {len(seq)} items, max {schema.seq_len}")
            for item in seq:
                _check_ids(tag, item, schema.shared_fields)


def _check_ids(tag, ids, fields):
    if len(ids) != len(fields):
        raise ValidationError(
            f"{tag}: {len(ids)} ids for {len(fields)} fields")
    for (name, vocab), i in zip(fields, ids):
        if not 0 <= i < vocab:
            raise ValidationError(
                f"field '{name}': id {i} outside vocab [0, {vocab})")


class EmbeddingTables:
    """One (vocab, d_e) table per field plus the shared sequence encoder."""

    def __init__(self, store, schema, prefix="emb"):
        self.schema = schema
        self.user = {
            name: store.add(f"{prefix}.user.{name}", vocab, schema.d_e,
                            init="uniform_embed")
            for name, vocab in schema.user_fields}
        self.shared = {
            name: store.add(f"{prefix}.shared.{name}", vocab, schema.d_e,
                            init="uniform_embed")
            for name, vocab in schema.shared_fields}
        self.spec = {
            entity: {
                name: store.add(f"{prefix}.spec.{entity}.{name}", vocab,
                                schema.d_e, init="uniform_embed")
                for name, vocab in schema.spec_fields[entity]}
            for entity in ENTITIES}
        d_in = schema.n_shared * schema.d_e
        self.wq = store.add(f"{prefix}.attn.wq", schema.d_attn, d_in)
        self.wk = store.add(f"{prefix}.attn.wk", schema.d_attn, d_in)


@dataclass
class EmbeddedSample:
    """Group vectors for a sample batch: each node is (dim, B) with one
    column per sample; B = 1 for a single sample."""

    entity: str
    user_vec: tg.Node
    seq_vec: tg.Node
    shared_vec: tg.Node
    spec_vec: tg.Node
    full: tg.Node


def _field_block(tables, fields, ids_per_sample):
    """Stack per-field embedding columns: -> (n_fields*d_e, B)."""
    parts = []
    for i, (name, _vocab) in enumerate(fields):
        ids = [ids[i] for ids in ids_per_sample]
        parts.append(tg.transpose(tg.gather_rows(tables[name], ids)))
    return tg.vconcat(parts) if len(parts) > 1 else parts[0]


def attention_pool(tables, seqs, query_base, return_weights=False):
    """Pool one behavior sequence per sample with dot-product attention.

    seqs is a list of B sequences (each a list of shared-field id-vectors);
    query_base is the (n_shared*d_e, B) candidate shared embedding. The
    query is wq @ query_base, keys and values are wk @ item embeddings,
    weights are a per-sample softmax of scaled dot products. An empty
    sequence pools to the zero vector.
    """
    schema = tables.schema
    counts = [len(s) for s in seqs]
    total = sum(counts)
    b = len(seqs)
    if total == 0:
        zero = tg.constant(tg.Tensor.zeros(schema.d_attn, b))
        if return_weights:
            return zero, None, counts
        return zero
    flat_items = [item for s in seqs for item in s]
    item_emb = _field_block(tables.shared, schema.shared_fields, flat_items)
    keys = tg.matmul(tables.wk, item_emb)  # (d_attn, total)
    query = tg.matmul(tables.wq, query_base)  # (d_attn, B)
    q_exp = tg.repeat_cols(query, counts)
    scores = tg.scale(tg.colsum(tg.mul(keys, q_exp)),
                      1.0 / (schema.d_attn ** 0.5))
    weights = tg.segment_softmax_row(scores, counts)
    pooled = tg.segment_colsum(tg.colscale(keys, weights), counts)
    if return_weights:
        return pooled, weights, counts
    return pooled


def embed_batch(schema, tables, samples, validate=True):
    """Embed same-entity samples into column-stacked group vectors."""
    if not samples:
        raise ValidationError("embed_batch: empty sample list")
    entity = samples[0].entity
    for s in samples:
        if s.entity != entity:
            raise ValidationError("embed_batch: mixed entities in one batch")
        if validate:
            s.validate(schema)
    user_vec = _field_block(tables.user, schema.user_fields,
                            [s.user_ids for s in samples])
    shared_vec = _field_block(tables.shared, schema.shared_fields,
                              [s.shared_ids for s in samples])
    spec_vec = _field_block(tables.spec[entity], schema.spec_fields[entity],
                            [s.spec_ids for s in samples])
    pooled_src = attention_pool(tables, [s.seq_source for s in samples],
                                shared_vec)
    pooled_tgt = attention_pool(tables, [s.seq_target for s in samples],
                                shared_vec)
    seq_vec = tg.vconcat([pooled_src, pooled_tgt])
    full = tg.vconcat([user_vec, seq_vec, shared_vec, spec_vec])
    return EmbeddedSample(entity=entity, user_vec=user_vec, seq_vec=seq_vec,
                          shared_vec=shared_vec, spec_vec=spec_vec, full=full)


def embed(schema, tables, sample, validate=True):
    """Embed one sample; each group vector is a (dim, 1) column."""
    return embed_batch(schema, tables, [sample], validate=validate)
