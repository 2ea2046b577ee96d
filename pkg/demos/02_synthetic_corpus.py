"""What the synthetic corpus looks like and how text becomes tensors.

Each record pairs a noisy text with an event type; the entity to recover
is cued by a marker character tied to that type. Encoding lays out
[CLS] text [SEP] event-type [SEP] with segment ids separating the two
parts, so one batch carries everything the model needs.
"""

from sebertnets.data import (
    SynthConfig,
    Vocabulary,
    batch,
    encode_example,
    flatten_for_training,
    generate_synthetic,
)

corpus = generate_synthetic(SynthConfig(n_examples=6, multi_entity_fraction=0.5),
                            seed=7)

for ex in corpus[:4]:
    print(f"{ex.id}: type={ex.event_type} gold={ex.gold_entities}")
    print(f"    {ex.text}")

vocab = Vocabulary.from_corpus(corpus)
print(f"\nvocab size {vocab.size} (chars + specials)")

# multi-entity records are flattened to one training row per gold entity
flat = flatten_for_training(corpus)
print(f"{len(corpus)} records -> {len(flat)} training rows")

enc = encode_example(flat[0], vocab, max_len=64)
print(f"\nencoded {enc.example_id}:")
print(f"  token ids    : {enc.token_ids[:12]} ...")
print(f"  segment ids  : {enc.segment_ids[:12]} ...")
print(f"  text span    : {enc.text_span} (inclusive token range of the text)")
print(f"  gold span    : {enc.gold}")

b = batch([encode_example(e, vocab, max_len=64) for e in flat[:4]])
print(f"\nbatched shapes: ids {b.token_ids.shape}, mask {b.attention_mask.shape}, "
      f"golds {b.golds.shape}")
