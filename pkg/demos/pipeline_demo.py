"""Walk one query through all four pipeline stages with offline providers.

Run: python3 demos/pipeline_demo.py
"""

from mmrag.generation import generate_answer, split_sentences
from mmrag.insertion import (
    answer_to_markdown,
    insert_prompt_based,
    insert_rule_based,
    merge,
)
from mmrag.model import DocumentChunk, ImageAsset, Query
from mmrag.providers import MockChatProvider, ScriptedChatProvider
from mmrag.retrieval import HashEmbeddingProvider, RetrievalConfig, retrieve

query = Query("demo", "How do I assemble the copper kettle?")

corpus = [
    DocumentChunk(
        "doc-kettle",
        "Fit the spout onto the copper body. Tighten the base ring. "
        "Polish the finished kettle.",
        image_ids=("image1", "image2"),
    ),
    DocumentChunk("doc-teapot", "Teapots are glazed and fired in a kiln."),
    DocumentChunk("doc-garden", "Plant the seeds two inches apart."),
]

images = {
    "image1": ImageAsset(
        "image1", "file:///img/spout.png", caption="fitting the spout onto the body"
    ),
    "image2": ImageAsset(
        "image2", "file:///img/base-ring.png", caption="tightening the base ring"
    ),
}

embedder = HashEmbeddingProvider(dim=128)

print("== stage 1: retrieval ==")
retrieved = retrieve(query, corpus, RetrievalConfig(k=2), embedder)
print("top-k documents:", [doc.id for doc in retrieved])

print("\n== stage 2: text generation (offline mock) ==")
answer_text = generate_answer(query, retrieved, MockChatProvider())
print("answer:", answer_text)

# A real run would split the generated answer; the mock answer is one
# sentence, so the rest of the demo works over a hand-written answer.
answer_text = "Fit the spout first. Then tighten the base ring. Polish it."
sentences = split_sentences(answer_text)
print("\nsentences:", sentences.to_dict())

candidates = list(images.values())

print("\n== stage 3a: prompt-based insertion (scripted reply) ==")
scripted = ScriptedChatProvider(
    [
        "<think>The spout photo matches sentence 1; the base-ring photo "
        'matches sentence 2.</think><answer>{"image1": 1, "image2": 2}</answer>'
    ]
)
placements, output = insert_prompt_based(query, sentences, candidates, scripted)
print("parse status:", output.parse_status)
print("placements:", placements.as_dict())

print("\n== stage 3b: rule-based insertion (bipartite matching) ==")
rule_placements = insert_rule_based(sentences, candidates, embedder, threshold=0.2)
print("placements:", rule_placements.as_dict())

print("\n== stage 4: merge ==")
merged = merge(answer_text, sentences, placements, images)
print(answer_to_markdown(merged, images))
