"""
Paging a conversation and searching it by keyword
=================================================

Turns are appended to an open page until it reaches the token budget, then
the page is sealed and never changes again. Sealed pages can be searched with
BM25 over their verbatim text.
"""

from tiered_memory import PageStore, demo
from tiered_memory.tokens import estimate_tokens

store = PageStore(max_page_tokens=1000)
for turn in demo.transcript():
    store.append_turn(demo.SESSION, turn)
store.flush(demo.SESSION)

# three pages, each at least 1000 estimated tokens except the flushed tail
for page in store.pages(demo.SESSION):
    print(page.page_id, page.token_count, "sealed" if page.sealed else "open", len(page.turns), "turns")

# the estimate is ceil(1.3 * whitespace words)
print(estimate_tokens("one two three four five six seven eight nine ten"))  # 13

# keyword search ranks pages by BM25; scores of zero are never returned
for page_id, score in store.keyword_search(["greyhound", "Pixel"], k=3):
    print(f"{page_id}  {score:.3f}")

print(store.keyword_search(["zeppelin"]))  # []
