"""
Summaries that point back to their pages
========================================

Each sealed page is condensed into short facts. A fact is embedded and keeps
the set of page ids it came from, so any answer built from summaries can be
traced to verbatim text.
"""

import numpy as np

from tiered_memory import Gateway, MockBackend, PageStore, SummaryIndex, demo

gateway = Gateway(MockBackend(demo.script()))
store = PageStore()
index = SummaryIndex(store)
store.on_seal(lambda page: index.summarize_page(gateway, page.page_id))

for turn in demo.transcript():
    store.append_turn(demo.SESSION, turn)
store.flush(demo.SESSION)
result = index.auto_summary(gateway, demo.SESSION)  # picks up the flushed tail
print("unindexed after auto_summary:", result.errors or "none")

for unit in index.units():
    print(unit.unit_id, sorted(unit.provenance), unit.text)

# embeddings are unit vectors, so a dot product is a cosine similarity
vecs = np.stack([index.embedder.embed(u.text) for u in index.units()])
print("norms:", np.round(np.linalg.norm(vecs, axis=1), 6))

# the extractor missed the dog's name, so the top hit is only loosely related
for hit in index.search("What is the name of Melanie's dog?", k=3):
    print(f"{hit.score:.3f}  {hit.unit.text}")

# collapsing hits to their pages gives the starting point for raw-log reading
hits = index.search("Caroline marathon", k=4)
print(index.rerank_pages(hits, "Caroline marathon", k=2))
