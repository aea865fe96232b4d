import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from tiered_memory import CorruptRecordError, NotFoundError, PageStore, StorageError, Turn, ValidationError
from tiered_memory.page_store import Page
from tiered_memory.tokens import estimate_tokens, words


def words_turn(i, n_words, speaker="A"):
    # "[ts] A:" renders as two words, so the text carries n_words - 2
    return Turn(f"ts{i}", speaker, " ".join(f"w{i}x{j}" for j in range(n_words - 2)))


def test_estimator_is_ceil_of_words_times_1_3():
    assert estimate_tokens("") == 0
    assert estimate_tokens("one") == 2
    assert estimate_tokens(" ".join(["w"] * 10)) == 13
    assert estimate_tokens(" ".join(["w"] * 23)) == 30  # 29.9 rounds up
    for n in range(200):
        assert estimate_tokens(" ".join(["x"] * n)) == math.ceil(round(n * 1.3, 6))


def test_turn_renders_canonical_line_and_validates():
    assert Turn("2024-01-01T10:00", "Ann", "hi there").render() == "[2024-01-01T10:00] Ann: hi there"
    with pytest.raises(ValidationError):
        Turn("2024", "", "text")
    with pytest.raises(ValidationError):
        Turn("2024", "Ann", "")


def test_fresh_session_opens_unsealed_page():
    store = PageStore()
    pid = store.append_turn("s", Turn("t", "A", "hello"))
    page = store.get_page(pid)
    assert pid == "s/p00000"
    assert page.sealed is False and page.indexed is False
    assert page.token_count == estimate_tokens(page.text)


def test_999_plus_1_seals_and_emits_event():
    store = PageStore(max_page_tokens=1000)
    sealed = []
    store.on_seal(sealed.append)
    # 768 words -> 999 tokens; one more word -> 1000
    store.append_turn("s", Turn("t0", "A", " ".join(["w"] * 766)))
    assert store.get_page("s/p00000").token_count == 999 and not sealed
    # smallest possible turn: its rendering "[t1] A: x" adds three words
    store.append_turn("s", Turn("t1", "A", "x"))
    assert len(sealed) == 1 and sealed[0].sealed
    assert sealed[0].token_count >= 1000


def test_forty_turns_of_thirty_tokens_make_two_pages():
    store = PageStore(max_page_tokens=1000)
    sealed_at = []
    store.on_seal(lambda p: sealed_at.append(len(p.turns)))
    for i in range(40):
        t = words_turn(i, 23)
        assert estimate_tokens(t.render()) == 30
        store.append_turn("s", t)
    # reference count by hand: ceil(23 * 1.3 * n) first reaches 1000 at n = 34
    n = next(n for n in range(1, 41) if math.ceil(23 * 13 * n / 10) >= 1000)
    assert n == 34
    assert sealed_at == [34]
    assert store.page_ids("s") == ["s/p00000", "s/p00001"]
    assert len(store.get_page("s/p00001").turns) == 6
    assert store.open_page_id("s") == "s/p00001"


def test_get_page_unknown_id():
    with pytest.raises(NotFoundError):
        PageStore().get_page("nope/p00000")


def test_sealed_page_is_immutable():
    store = PageStore(max_page_tokens=5)
    pid = store.append_turn("s", Turn("t", "A", "one two three four five"))
    page = store.get_page(pid)
    assert page.sealed
    with pytest.raises((AttributeError, TypeError)):
        page.turns = ()
    with pytest.raises((AttributeError, TypeError)):
        page.turns.append(Turn("t", "A", "x"))
    store.append_turn("s", Turn("t2", "A", "later"))
    assert store.get_page(pid).to_json() == page.to_json()


def test_flush_seals_undersize_page_and_is_noop_when_empty():
    store = PageStore()
    store.append_turn("s", Turn("t", "A", "short"))
    pid = store.flush("s")
    assert store.get_page(pid).sealed
    assert store.flush("s") is None
    assert store.flush("other") is None


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=60), min_size=1, max_size=80),
       st.integers(min_value=20, max_value=200))
def test_seal_threshold_and_single_open_page(sizes, limit):
    store = PageStore(max_page_tokens=limit)
    for i, n in enumerate(sizes):
        store.append_turn("s", Turn(f"t{i}", "A", " ".join(["w"] * n)))
        open_pages = [p for p in store.pages("s") if not p.sealed]
        assert len(open_pages) <= 1
        for p in open_pages:
            assert p.token_count < limit
    for p in store.pages("s"):
        assert p.token_count == estimate_tokens(p.text)
        if p.sealed:
            assert p.token_count >= limit
    assert sum(len(p.turns) for p in store.pages("s")) == len(sizes)


# -- BM25 ------------------------------------------------------------------


def brute_bm25(texts, query_terms, k1=1.2, b=0.75):
    """Straight-from-the-formula scorer over raw texts (independent of the store)."""
    toks = {pid: words(t) for pid, t in texts.items()}
    n = len(toks)
    avgdl = sum(len(v) for v in toks.values()) / n
    out = {}
    for pid, doc in toks.items():
        score = 0.0
        for term in set(query_terms):
            df = sum(1 for d in toks.values() if term in d)
            if df == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            tf = doc.count(term)
            score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
        if score > 0:
            out[pid] = score
    return sorted(out.items(), key=lambda kv: (-kv[1], kv[0]))


def test_keyword_absent_and_single_page_hit(tmp_path):
    from conftest import fill_store

    store, ids = fill_store(["apple banana", "cherry date", "elder fig"])
    assert store.keyword_search(["zucchini"]) == []
    assert store.keyword_search([]) == []
    assert store.keyword_search(["cherry"])[0][0] == ids[1]


def test_bm25_controlled_five_page_corpus():
    from conftest import fill_store

    texts = [
        "river river river boat",
        "river boat boat boat boat dock",
        "mountain trail river",
        "boat",
        "trail trail trail mountain mountain",
    ]
    store, ids = fill_store(texts)
    got = store.keyword_search(["river", "boat"], k=5)
    page_texts = {pid: store.get_page(pid).text for pid in ids}
    want = brute_bm25(page_texts, ["river", "boat"])
    assert [p for p, _ in got] == [p for p, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, rel=1e-12)


def test_bm25_ties_break_by_page_id():
    from conftest import fill_store

    store, ids = fill_store(["same words here", "same words here", "other"])
    got = store.keyword_search(["same"], k=3)
    assert [p for p, _ in got] == sorted(ids[:2])
    assert got[0][1] == got[1][1]


def test_keyword_search_respects_k():
    from conftest import fill_store

    store, _ = fill_store([f"token doc{i}" for i in range(6)])
    assert len(store.keyword_search(["token"], k=3)) == 3
    with pytest.raises(ValidationError):
        store.keyword_search(["token"], k=0)


# -- persistence -------------------------------------------------------------


def build_store(root=None, n=25):
    store = PageStore(max_page_tokens=60, root=root)
    for i in range(n):
        store.append_turn("s", Turn(f"t{i}", "A" if i % 2 else "B", f"turn {i} says something about item {i}"))
    return store


def test_snapshot_restore_round_trip(tmp_path):
    store = build_store()
    store.mark_indexed("s/p00000")
    path = store.snapshot("s", tmp_path)
    first = path.read_bytes()
    restored = PageStore(max_page_tokens=60)
    restored.restore("s", tmp_path)
    for pid in store.page_ids("s"):
        assert restored.get_page(pid) == store.get_page(pid)
    assert restored.get_page("s/p00000").indexed
    restored.snapshot("s", tmp_path / "again")
    assert (tmp_path / "again" / "s" / "pages.jsonl").read_bytes() == first


def test_restore_continues_same_open_page(tmp_path):
    uninterrupted = build_store(n=25)
    partial = build_store(n=20)
    partial.snapshot("s", tmp_path)
    resumed = PageStore(max_page_tokens=60)
    resumed.restore("s", tmp_path)
    assert resumed.open_page_id("s") == partial.open_page_id("s")
    for i in range(20, 25):
        resumed.append_turn("s", Turn(f"t{i}", "A" if i % 2 else "B", f"turn {i} says something about item {i}"))
    assert [p.to_json() for p in resumed.pages("s")] == [p.to_json() for p in uninterrupted.pages("s")]


def test_truncated_last_line_reports_line_number(tmp_path):
    store = build_store()
    path = store.snapshot("s", tmp_path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1] + [lines[-1][: len(lines[-1]) // 2]]) + "\n")
    with pytest.raises(CorruptRecordError) as exc:
        PageStore().restore("s", tmp_path)
    assert exc.value.lineno == len(lines)


def test_persistent_store_writes_on_seal(tmp_path):
    store = build_store(root=tmp_path, n=25)
    reloaded = PageStore(max_page_tokens=60)
    reloaded.restore("s", tmp_path)
    sealed = [p.page_id for p in store.pages("s") if p.sealed]
    assert sealed and all(pid in reloaded for pid in sealed)


def test_storage_failure_does_not_record_turn(tmp_path):
    blocker = tmp_path / "blocked"
    blocker.write_text("not a directory")
    store = PageStore(max_page_tokens=5, root=blocker)
    with pytest.raises(StorageError):
        store.append_turn("s", Turn("t", "A", "one two three four five six"))
    assert store.pages("s") == [] or all(not p.turns for p in store.pages("s"))


def test_page_json_round_trip():
    page = Page("s/p00001", "s", (Turn("t", "A", "x y"),), 5, True, False)
    assert Page.from_json(page.to_json()) == page
    assert Counter(words(page.text)) == Counter({"t": 1, "a": 1, "x": 1, "y": 1})
