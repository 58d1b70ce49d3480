"""Prompt catalog and slot substitution.

Templates carry ``{slot_name}`` markers; ``render`` substitutes them in a
single pass, so braces inside bound values are never re-expanded. The
insertion, generation, and judge templates are fixed assets: changing their
wording changes model behavior and therefore every downstream number, so
treat edits as breaking.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from .errors import MissingSlot

_SLOT_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def slots(self) -> tuple[str, ...]:
        seen: list[str] = []
        for match in _SLOT_RE.finditer(self.body):
            if match.group(1) not in seen:
                seen.append(match.group(1))
        return tuple(seen)


def render(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    """Substitute every slot in one pass; unresolved slots are an error."""
    missing = [slot for slot in template.slots() if slot not in bindings]
    if missing:
        raise MissingSlot(missing)
    return _SLOT_RE.sub(lambda match: str(bindings[match.group(1)]), template.body)


TEXT_ANSWER = PromptTemplate(
    "text-answer",
    """\
# Input:
Question:{query_str}
Context:{context_str}

# Task
Imagine you are a text QA expert. You will be provided with a plain text context and a query related to that context. Your task is to answer the query based solely on the content of the context. Ensure that your answer does not include any additional information outside the context . Please note that your answer should be in pure text format.

# Output Format
Provide the answer in pure text format. Do not include any information beyond what is contained in the context.""",
)


INSERT_R1 = PromptTemplate(
    "insert-r1",
    """\
You are an expert in inserting images into texts, specializing in analyzing the relationship between images and texts and optimizing their alignment for enhanced readability and information clarity.
## Task
Given a question, a dictionary of ground truth answers (where keys are sentence indices and values are sentence content), and a list of candidate images (with captions or contexts), your task is to:
Assess image relevance and select suitable ones. Determine optimal image placements. Output only the selected image-sentence dict, where key is the image ID and value is the sentence index after which the image should be placed.
## Format
Within <think> tags, explain your reasoning, covering: Image content analysis. Relevance to the text. Image placement and justification. Ensuring seamless multimodal integration.
In the <answer> tags, return a dictionary where each key is a selected image ID (e.g., "image20") and the value can only be a single sentence index (integer) indicating the exact sentence after which the image should be inserted.If no image is selected, return an empty dictionary.
Note: Only output the selected images and their respective placements.
Question: {question}
Ground truth answer dict: {ground_truth_dict}
Candidate images information: {imgs_info}""",
)


INSERT_BASE = PromptTemplate(
    "insert-base",
    """\
You are an expert in inserting images into texts, specializing in analyzing the relationship between images and texts and optimizing their alignment for enhanced readability and information clarity.
## Task
Given a question, a dictionary of ground truth answers (where keys are sentence indices and values are sentence content), and a list of candidate images (with captions or contexts), your task is to:
Assess image relevance and select suitable ones. Determine optimal image placements. Output only the selected image-sentence dict, where key is the image ID and value is the sentence index after which the image should be placed.
## Format
Return a dictionary where each key is a selected image ID (e.g., "image20") and the value can only be a single sentence index (integer) indicating the exact sentence after which the image should be inserted. If no image is selected, return an empty dictionary.
Note: Only output the final answer in a single dict, with the selected image ids (e.g., "image20") as keys and their respective placements sentence index as value (e.g., "2").
Question: {question}
Ground truth answer dict: {ground_truth_dict}
Candidate images information: {imgs_info}""",
)


RELEVANCE_JUDGE = PromptTemplate(
    "judge-relevance",
    """\
# Input
Query: {query_str}
Answer: {answer_str}
Image Context: {context_str_list}
Image Caption: {caption_str_list}
Image number to be rated: {image_number}

# Task
Imagine you are a multimodal QA evaluation expert. Your task is to evaluate the relevance the selected images within an answer to the given query and the overall quality of the answer. Specifically, the answer contains both text and images. You need to assess whether the selected images are relevant to the QApair in terms of content.

## Answer Input Format
[text_context_1] <img_1> [text_context_2] <img_2>...

Explanation:
Each "[text_context_x]" is a piece of pure text context, and each <img> represents an image. The images will be provided in the same order as the placeholders <img>.

## Image Context Input Format
[context_above] <img> [context_bottom]
Explanation: The image to be evaluated is provided along with its preceding and following context in placeholder form.

# Scoring Criteria of Relevance
When scoring, strictly adhere to the following standards, with a range of 1 to 5:
- 1 point: Completely unrelated: The images in the answer have no connection to the main content of the query and answer, and are irrelevant overall.
- 2 points: Weakly related: The images in the answer have a very tenuous connection to the main content of the query and answer.
- 3 points: Partially related: The images in the answer are somewhat connected to part of the content of the query and answer.
- 4 points: Mostly related: The images in the answer have a fairly clear connection to the main content of the query and answer.
- 5 points: Highly related: The images in the answer are highly relevant to the content of the query and answer.

Provide a brief reason for the evaluation along with a score from 1 to 5. Ensure you do not use any evaluation criteria beyond the query and answer.

# Output Format
Please output two lines for each measure: the first line is your reasoning for the score, and the second line is the score. Strictly follow this format without any additional content.

# requirements
1. There must be an integer output for each score (1-5).
2. There must be a <relevance_score> tag for the relevance score and a <effective_score> tag for the effectiveness score, and a <overall_quality_score> tag for the overall quality score.

# Output Example
Highly relevant: The images in the answer show the number of pillars in front of the gate, which perfectly match the query about the number of pillars. All images in the answer are highly relevant to the content of the query and answer.
<relevance_score>5</relevance_score>""",
)


POSITION_JUDGE = PromptTemplate(
    "judge-position",
    """\
# Input
Query: {query_str}
Answer: {answer_str}
Image Context: {context_str_list}
Image Caption: {caption_str_list}
Image number to be rated: {image_number}

# Task
Imagine you are a multimodal problem-solving expert tasked with evaluating whether the position of each selected image within an answer to the given query is appropriate.
## Requirements
1. If there are repeated images in the answer, only evaluate the first occurrence, and for repeated images, rate them as 0 (except for the first occurrence).
## Answer Input Format
[text_context_1] <img_1> [text_context_2] <img_2>...
Explanation:
Each "[text_context_x]" is a segment of pure text context, and each <img> represents an image. The images will be presented in the same order as the placeholders <img>.
## Image Context Input Format
[context_above] <img> [context_bottom]
Explanation: The image under evaluation is provided along with its preceding and following contexts in placeholder form, corresponding to <img>.
# Revised Evaluation Criteria:
Strictly follow the criteria below to assign a score of 0 or 1:
- 0 points, Inappropriate Position: The image is irrelevant to both the preceding and following context, or the position of the image does not enhance content understanding or visual appeal. The insertion of the image does not align with the logical progression of the text and fails to improve the reading experience or information transmission.
- 1 point, Appropriate Position: The image is contextually relevant to at least one of the surrounding contexts (preceding or following), and it enhances content understanding or visual effect. The position of the image aligns with the logical flow of the text and is inserted appropriately, improving the overall information delivery. If the description of the image is detailed, it further clarifies the connection between the image and the text, enhancing the overall expressive effect.
# Output Format
Provide a brief justification for the evaluation and a score of either 0 or 1 for each unique image. Ensure no evaluation criteria beyond the provided query and answer are used.
For images that appear multiple times, evaluate only the first occurrence and do not provide additional scores for repeated occurrences.
Please output two lines for each image: the first line is your reasoning for the score, and the second line is the score. Strictly follow this format without any additional content.

# Output Example
<img_1> shows a decorative lamp post, but the surrounding context describes architectural features unrelated to the lamp post. The image placement disrupts the logical flow and fails to enhance understanding.
<img_1_score>0</img_1_score>
<img_2> depicts three pillars in front of a gate, and its context discusses the number of pillars in front of the gate. Therefore, the position is appropriate.
<img_2_score>1</img_2_score>""",
)


# This toolkit's own prompt for the one-pass interleaved baseline; the
# placeholder grammar it requests matches what parse_single_shot accepts.
SINGLE_SHOT = PromptTemplate(
    "single-shot",
    """\
You are a multimodal QA expert. You will be provided with a question, a plain text context, and a list of candidate images (with captions or contexts). Write a complete answer to the question in a single pass, based solely on the provided context, and insert the relevant candidate images directly into the answer.
## Format
Produce the interleaved answer as:
[text_context_1] <img_1> [text_context_2] <img_2>...
Each "[text_context_x]" is pure answer text. Each placeholder names a candidate image by its ID in angle brackets (e.g., <image20>) and marks the point where that image appears, immediately after the sentence it illustrates. Use only IDs from the candidate list, use each image at most once, and insert only images that genuinely support the answer. If no image fits, output the plain text answer without placeholders.
Question: {question}
Context: {context_str}
Candidate images information: {imgs_info}""",
)


# This toolkit's own rubric for tri-judge difficulty scoring.
DIFFICULTY_JUDGE = PromptTemplate(
    "judge-difficulty",
    """\
# Input
Question: {question}
Reference answer: {answer_str}

# Task
You are grading how reliably a capable assistant could reproduce the reference answer to this question. Rate answer accuracy achievability on a 1-5 scale:
- 1: Very hard - the reference answer is long, multi-part, or depends on subtle details that are easy to miss.
- 2: Hard - most attempts would miss important parts of the reference answer.
- 3: Moderate - a careful attempt matches the reference answer, but there is room for error.
- 4: Easy - the reference answer is short or direct and most attempts would match it.
- 5: Very easy - the question is simple and the reference answer is unambiguous.

# Output Format
One line of brief reasoning, then the score inside a tag:
<difficulty_score>3</difficulty_score>""",
)


CATALOG: dict[str, PromptTemplate] = {
    template.name: template
    for template in (
        TEXT_ANSWER,
        INSERT_R1,
        INSERT_BASE,
        SINGLE_SHOT,
        RELEVANCE_JUDGE,
        POSITION_JUDGE,
        DIFFICULTY_JUDGE,
    )
}
