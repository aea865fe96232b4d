"""Prompt templates, one per :class:`PromptKind`.

Placeholders are ``{name}`` tokens; only names listed in ``PLACEHOLDERS`` are
substituted, so literal JSON braces in the templates are left alone.
"""

from __future__ import annotations

import enum
import re
from typing import Mapping

from ..errors import TemplateError


class PromptKind(str, enum.Enum):
    FACT_EXTRACTION = "FactExtraction"
    INTEGRATION = "Integration"
    PLAN = "Plan"
    ROUTER = "Router"
    ANSWER_SUMMARY = "AnswerSummary"
    ANSWER_RESEARCH = "AnswerResearch"
    WRITEBACK_VERIFY = "WriteBackVerify"
    WRITEBACK_EDIT = "WriteBackEdit"
    JUDGE_CORRECTNESS = "JudgeCorrectness"
    JUDGE_SUFFICIENCY = "JudgeSufficiency"


class AnswerStyle(str, enum.Enum):
    SHORT_PHRASE = "short_phrase"
    EPISODIC = "episodic"


FACT_EXTRACTION = """\
You are the Universal Memory Encoder. Your goal is to convert raw input stream into high-fidelity, self-contained knowledge records (Long-term Memory).

INPUT FORMATTING NOTICE:
The input will be provided in the next user message, prefixed by 'Input:' and often formatted as dialogue lines.
It may follow a pattern like: '[Timestamp] Speaker_Name: Content'.
- If this pattern is present, you MUST use the 'Timestamp' for temporal grounding and 'Speaker_Name' for entity resolution.
- If this pattern is absent (e.g., raw document text), treat the input as a factual source and extract knowledge propositions.

CORE OBJECTIVES:
1. ENTITY & CONTEXT RESOLUTION:
   - No ambiguous references: Every extracted fact must explicitly name the involved people, organizations, objects, places, and concepts.
   - No "User" ambiguity: If the input says '[... ] Melanie: I like art', the fact MUST be "Melanie likes art", NOT "The user likes art".
   - De-contextualization: Each extracted fact must be standalone.
2. TEMPORAL GROUNDING: Use the provided timestamps in the input as the source of truth. Convert relative time ("tomorrow", "next week") into absolute context.
3. PRONOUN & DEIXIS ELIMINATION: Extracted facts must not contain any pronouns. If a pronoun appears, resolve it to the specific entity.
4. SCENE TAGGING (EMBEDDED): Identify the immediate scene/activity (2-5 words). Append this scene to the end of the fact string inside brackets.

OUTPUT INSTRUCTIONS (MUST FOLLOW):
Return a JSON object with EXACTLY this schema:
{
  "facts": [
      "<atomic fact sentence 1> [Scene: ...]",
      "<atomic fact sentence 2> [Scene: ...]", ...
  ]
}
Rules: Output JSON only (no extra text, no markdown code fences).

Input: {input}
"""

INTEGRATION = """\
You are a research assistant extracting facts from conversation evidence to answer a question.

QUESTION: {question}
RETRIEVED EVIDENCE: {evidence}

YOUR TASK:
Read through ALL pages in the evidence and extract facts that help answer the question.

EXTRACTION STRATEGY:
Identify what information is needed and extract:
1. Direct answers: Facts that directly answer the question
2. Component facts: Facts about entities/topics in the question that can be combined
3. Temporal facts: When events happened
4. Confirmation facts: Look for acceptance/approval messages

OUTPUT FORMAT (JSON):
{
  "linked_facts": [
    {
      "fact": "<extracted fact - use specific dates/names>",
      "evidence_quote": "<EXACT quote from the evidence>"
    }
  ],
  "coverage_assessment": "<what aspects are covered vs missing>"
}
"""

PLAN = """\
You are a research planner. Based on the current facts and the question, decide if more information is needed.

QUESTION: {question}
CURRENT FACTS: {current_facts}
COVERAGE ASSESSMENT: {coverage_assessment}
RESEARCH HISTORY: {research_history}
ALREADY SEARCHED: {searched_queries}

YOUR TASK:
Decide whether the current facts are SUFFICIENT to answer the question, or if more search is needed.

OUTPUT FORMAT (JSON):
{
  "decision": "DONE" or "SEARCH",
  "reasoning": "<brief explanation>",
  "search_commands": [
    {"type": "MEM0_SEARCH", "query": "<semantic search query>"},
    {"type": "KEYWORD_SEARCH", "keywords": ["k1", "k2"]}
  ]
}

DECISION CRITERIA:
- DONE: The facts contain enough information to provide a reasonable answer.
- SEARCH: Key information is missing and more search might help.
"""

ROUTER = """\
You are an expert router for a memory-augmented QA system. Analyze the retrieved summaries and decide the best action to answer the question.

Available actions:
1. "S" - Answer using current summaries only. Use when Summaries contain the EXPLICIT answer.
2. "R" - Deep research mode (slow path). Use when Summaries are ambiguous, only contextually related, or miss the answer entirely.

Question: {q}
Retrieved Summaries: {summaries_block}

Output format (JSON only):
- If answering with summaries: {"action": "S"}
- If deep research needed: {"action": "R"}
"""

ANSWER_SHORT_PHRASE = """\
Based on the summary below, write an answer in the form of **a short phrase**...
Answer with exact words from the context whenever possible.
For date/time, strictly follow the format "15 July 2023"...

QUESTION: {question}
SUMMARY: {summary}
Short answer:
"""

ANSWER_EPISODIC = """\
You are an intelligent memory assistant tasked with retrieving accurate
information from episodic memories.

# INSTRUCTIONS:
Synthesize information from different memories to answer the user's question.
It is CRITICAL that you move beyond simple fact extraction and perform
logical inference. Answer the question in a short phrase.

QUESTION: {question}
SUMMARY: {summary}
Short answer:
"""

WRITEBACK_VERIFY = """\
You are a strict quality judge for memory facts. Given a question and candidate facts, select ONLY high-quality facts that meet ALL criteria.

Question: {question}
Candidate Facts: {facts_list}

Quality Criteria (ALL must be met):
1. Directly Relevant: Directly helps answer this specific question.
2. Specific & Concrete: Contains names, dates, numbers, locations.
3. Factually Grounded: Based on concrete conversation content.
4. Non-redundant & Self-contained.

Reject facts that are: Too general, obvious from the question, vague, or tangentially related.

Output format: Return ONLY a JSON array of selected fact indices (0-based), e.g., [0, 2], [1], or [] if none qualify.
"""

# No published template exists for the memory-manager step; this one states
# the three operations and the entailment / refinement / novelty rules.
WRITEBACK_EDIT = """\
You are the Memory Manager for a long-term memory store. A new verified fact was found while answering a question. Compare it with the related existing memory entries and choose exactly one operation.

Triggering question: {question}
New fact: {new_fact}
Related existing entries:
{candidates}

Allowed operations: {allowed_operations}
- SKIP: the new fact is already semantically entailed by an existing entry, or is not worth remembering.
- UPDATE: the new fact adds specific details (e.g., timestamps, names) to a vague existing entry. Give the index of that entry as "target" and write the merged entry as "merged_text".
- ADD: the new fact describes a distinct, previously unindexed event.

Output format (JSON only):
{"operation": "ADD" or "UPDATE" or "SKIP", "target": <entry index, UPDATE only>, "merged_text": "<merged entry, UPDATE only>"}
"""

JUDGE_CORRECTNESS = """\
Your task is to label an answer to a question as 'CORRECT' or 'WRONG'.
You will be given:
    (1) a question (posed by one user to another user),
    (2) a 'gold' (ground truth) answer,
    (3) a generated answer.

The gold answer will usually be a concise and short answer.
The generated answer might be much longer, but you should be generous
with your grading - as long as it touches on the same topic/time
as the gold answer, it should be counted as CORRECT.

Question: {question}
Gold answer: {gold_answer}
Generated answer: {generated_answer}

First, provide a short (one sentence) explanation of your reasoning,
then finish with CORRECT or WRONG in a json format with the key as "label".
"""

JUDGE_SUFFICIENCY = """\
You are evaluating whether retrieved summaries contain sufficient information to answer a question.

Question: {question}
Gold answer: {gold_answer}

Retrieved summaries:
{summaries_text}

Your task: Determine if the summaries contain EXPLICIT information to answer the question correctly.

Strict criteria (be conservative):
1. The answer should be DIRECTLY stated or clearly derivable from the summaries.
2. Do NOT count vague/related information as sufficient.
3. Do NOT infer causes from effects.
4. For completeness questions ("how many", "list all", "both"), summaries must be COMPLETE.
5. For exact details (dates, numbers, names), summaries must contain those exact details.

If you have ANY doubt whether the summaries allow a factual answer without guessing, answer false.

Output JSON:
{
  "has_sufficient_info": true/false,
  "reason": "..."
}
"""

TEMPLATES: dict[PromptKind, str] = {
    PromptKind.FACT_EXTRACTION: FACT_EXTRACTION,
    PromptKind.INTEGRATION: INTEGRATION,
    PromptKind.PLAN: PLAN,
    PromptKind.ROUTER: ROUTER,
    PromptKind.WRITEBACK_VERIFY: WRITEBACK_VERIFY,
    PromptKind.WRITEBACK_EDIT: WRITEBACK_EDIT,
    PromptKind.JUDGE_CORRECTNESS: JUDGE_CORRECTNESS,
    PromptKind.JUDGE_SUFFICIENCY: JUDGE_SUFFICIENCY,
}

ANSWER_TEMPLATES: dict[AnswerStyle, str] = {
    AnswerStyle.SHORT_PHRASE: ANSWER_SHORT_PHRASE,
    AnswerStyle.EPISODIC: ANSWER_EPISODIC,
}

PLACEHOLDERS: dict[PromptKind, tuple[str, ...]] = {
    PromptKind.FACT_EXTRACTION: ("input",),
    PromptKind.INTEGRATION: ("question", "evidence"),
    PromptKind.PLAN: (
        "question",
        "current_facts",
        "coverage_assessment",
        "research_history",
        "searched_queries",
    ),
    PromptKind.ROUTER: ("q", "summaries_block"),
    PromptKind.ANSWER_SUMMARY: ("question", "summary"),
    PromptKind.ANSWER_RESEARCH: ("question", "summary"),
    PromptKind.WRITEBACK_VERIFY: ("question", "facts_list"),
    PromptKind.WRITEBACK_EDIT: ("question", "new_fact", "candidates", "allowed_operations"),
    PromptKind.JUDGE_CORRECTNESS: ("question", "gold_answer", "generated_answer"),
    PromptKind.JUDGE_SUFFICIENCY: ("question", "gold_answer", "summaries_text"),
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def template_for(kind: PromptKind, style: AnswerStyle | str = AnswerStyle.SHORT_PHRASE) -> str:
    kind = PromptKind(kind)
    if kind in (PromptKind.ANSWER_SUMMARY, PromptKind.ANSWER_RESEARCH):
        return ANSWER_TEMPLATES[AnswerStyle(style)]
    return TEMPLATES[kind]


def render_prompt(
    kind: PromptKind | str,
    variables: Mapping[str, str],
    style: AnswerStyle | str = AnswerStyle.SHORT_PHRASE,
) -> str:
    """Fill the template for ``kind``; substituted values are never re-expanded."""
    kind = PromptKind(kind)
    names = PLACEHOLDERS[kind]
    missing = [n for n in names if n not in variables]
    if missing:
        raise TemplateError(kind.value, missing)

    def fill(match: re.Match) -> str:
        name = match.group(1)
        if name in names:
            return str(variables[name])
        return match.group(0)

    return _PLACEHOLDER_RE.sub(fill, template_for(kind, style))
