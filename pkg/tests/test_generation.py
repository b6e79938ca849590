import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES, check_golden
from stylecast.classify import build_embedding_index
from stylecast.errors import ProviderError, StageError
from stylecast.generation import (
    GenerationDeps,
    GenerationRequest,
    build_prompt,
    clean_output,
    generate_comment,
    generate_for_video,
    generate_styled,
    select_few_shot,
    select_template,
    truncate_at_sentence,
)
from stylecast.ingestion import CommentRecord, DatasetBundle, StyleLabel, VideoManifestEntry
from stylecast.providers import (
    MockEmbedProvider,
    MockGenerateProvider,
    MockSentimentProvider,
    longest_shared_run,
)
from stylecast.selection import category_profiles

BUNDLE = DatasetBundle.load(FIXTURES / "dataset.json")
TEMPLATE = CommentRecord("t1", "ds", "Roses are red, the cat is blue, it fell in the box and so did you!",
                         120, "en", StyleLabel.RHYMING)
DESCRIPTION = ("A grey cat stalks a cardboard box in a sunny kitchen, leaps in, "
               "tips the box over and peeks out while its owner laughs.")


def request(style=StyleLabel.RHYMING, few_shot=None, language="en"):
    if few_shot is None:
        few_shot = select_few_shot(BUNDLE, style, language, 3, exclude_ids=[TEMPLATE.comment_id])
    return GenerationRequest(DESCRIPTION, TEMPLATE, style, language, few_shot)


def deps(**kw):
    embed = MockEmbedProvider()
    base = dict(bundle=BUNDLE, index=build_embedding_index(BUNDLE, embed), profiles=category_profiles(BUNDLE),
                embed=embed, sentiment=MockSentimentProvider(), generate=MockGenerateProvider())
    base.update(kw)
    return GenerationDeps(**base)


def video(description=DESCRIPTION, platform="youtube"):
    return VideoManifestEntry("vx", platform, "https://youtu.be/vx" if platform == "youtube"
                              else "https://www.douyin.com/video/vx", semantic_description=description)


# --- prompt ----------------------------------------------------------------


def test_few_shot_selection_is_by_likes_then_id():
    pairs = select_few_shot(BUNDLE, StyleLabel.PLAIN_HUMOR, "en", 3)
    likes = [c.like_count for _, c in pairs]
    assert likes == sorted(likes, reverse=True)
    assert all(c.style_label is StyleLabel.PLAIN_HUMOR and c.language == "en" for _, c in pairs)
    excluded = select_few_shot(BUNDLE, StyleLabel.PLAIN_HUMOR, "en", 3, exclude_ids=[pairs[0][1].comment_id])
    assert pairs[0][1].comment_id not in {c.comment_id for _, c in excluded}


def test_few_shot_prompt_golden():
    req = request()
    assert req.few_shot, "fixture dataset should hold rhyming en comments"
    doc = build_prompt(req)
    assert "[STYLE:rhyming]" in doc.user and "structure reference only" in doc.user
    assert doc.warnings == ()
    check_golden("prompt_few_shot.txt", doc.render())


def test_zero_shot_prompt_golden():
    doc = build_prompt(request(few_shot=()))
    assert doc.warnings == ("zero-shot: no rhyming examples for en",)
    check_golden("prompt_zero_shot.txt", doc.render())


def test_identical_requests_identical_fingerprints():
    assert build_prompt(request()).fingerprint == build_prompt(request()).fingerprint
    assert build_prompt(request()).fingerprint != build_prompt(request(few_shot=())).fingerprint


def test_request_validation():
    mismatched = ((DESCRIPTION, CommentRecord("x", "v", "t", language="en", style_label="plain_humor")),)
    with pytest.raises(ValueError, match="does not match"):
        GenerationRequest(DESCRIPTION, TEMPLATE, StyleLabel.RHYMING, "en", mismatched)
    with pytest.raises(ValueError, match="unknown prompt template"):
        GenerationRequest(DESCRIPTION, TEMPLATE, StyleLabel.RHYMING, "en", (), "generate-v99")


# --- generate_comment ------------------------------------------------------


def test_canned_comment_round_trip():
    provider = MockGenerateProvider(script=['  "Cats and boxes, name a better duo."  '])
    out = generate_comment(request(), provider)
    assert out.text == "Cats and boxes, name a better duo."
    assert out.request_fingerprint == build_prompt(request()).fingerprint
    assert out.provider_id == "mock-generate-v1" and not out.reasked


def test_overlong_reask_then_truncate():
    long_text = ("The cat jumps in the box. " * 20).strip()
    assert len(long_text) == 519
    provider = MockGenerateProvider(script=[long_text, long_text])
    out = generate_comment(request(), provider, ceiling=200)
    assert len(provider.calls) == 2
    assert provider.calls[1]["messages"][-1]["content"][0]["text"] == (
        "Your comment is too long. Rewrite it in at most 200 characters, same style.")
    assert out.reasked and out.truncated
    assert len(out.text) <= 200 and out.text.endswith(".")
    assert out.text == ("The cat jumps in the box. " * 7).strip()


def test_reask_that_fits_is_not_truncated():
    provider = MockGenerateProvider(script=["x" * 300, "Short and sweet."])
    out = generate_comment(request(), provider, ceiling=200)
    assert out.text == "Short and sweet." and out.reasked and not out.truncated


def test_outage_error_carries_fingerprint():
    provider = MockGenerateProvider(script=[ProviderError("503", retryable=True)] * 3)
    with pytest.raises(ProviderError, match="generation failed") as info:
        generate_comment(request(), provider, max_retries=2)
    assert info.value.fingerprint == build_prompt(request()).fingerprint
    assert len(provider.calls) == 3


def test_empty_output_is_retried():
    provider = MockGenerateProvider(script=['""', "ok then"])
    assert generate_comment(request(), provider).text == "ok then"


@given(st.text(min_size=1, max_size=400), st.integers(1, 200))
def test_truncation_respects_limit(text, limit):
    out = truncate_at_sentence(text, limit)
    assert len(out) <= limit
    assert text.startswith(out.strip()) or text.startswith(out)


def test_clean_output():
    assert clean_output("  “引号里的评论”  ") == "引号里的评论"
    assert clean_output("'a'") == "a"


@pytest.mark.parametrize("style", list(StyleLabel))
def test_mock_output_never_copies_template(style):
    out = generate_comment(request(style, few_shot=()), MockGenerateProvider())
    assert not longest_shared_run(out.text, TEMPLATE.text, 10)


# --- end to end ------------------------------------------------------------


def test_missing_description():
    with pytest.raises(StageError, match="run describe first"):
        generate_for_video(video(description=""), "auto", deps())


def test_auto_style_inherits_template_label():
    outcome = generate_for_video(video(), "auto", deps())
    template = outcome.selection.tournament.template
    assert outcome.comment.style is template.style_label
    assert outcome.style_source == "template"


def test_unlabeled_template_defaults_to_plain_humor():
    unlabeled = DatasetBundle(tuple(
        type(it)(it.video_id, it.platform, it.language, it.category, it.semantic_description,
                 tuple(CommentRecord(c.comment_id, c.video_id, c.text, c.like_count, c.language) for c in it.comments))
        for it in BUNDLE.items))
    outcome = generate_for_video(video(), "auto", deps(bundle=unlabeled))
    assert outcome.comment.style is StyleLabel.PLAIN_HUMOR
    assert outcome.style_source == "default_unlabeled_template"
    assert outcome.prompt.warnings


def test_other_category_pools_all_categories():
    outcome = generate_for_video(video("zzz qqq xxv"), "auto", deps())
    sel = outcome.selection
    assert sel.decision.fallback_applied and sel.pool_fallback
    assert sel.tournament.trace["pool_fallback_all_categories"] is True
    assert len(sel.tournament.pool) == len(BUNDLE.comments("en"))


def test_explicit_style_and_reuse_of_selection():
    d = deps()
    sel = select_template(video(), d)
    a = generate_styled(video(), sel, "sarcasm_irony", d)
    b = generate_styled(video(), sel, StyleLabel.SARCASM_IRONY, d)
    assert a.comment == b.comment and a.style_source == "explicit"


def test_end_to_end_golden():
    outcome = generate_for_video(video(), "auto", deps())
    record = outcome.record("vx")
    again = generate_for_video(video(), "auto", deps()).record("vx")
    assert record == again
    check_golden("generate_end_to_end.json", json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def test_generate_stage_error_is_tagged():
    d = deps(generate=MockGenerateProvider(script=[ProviderError("down")]))
    with pytest.raises(ProviderError, match=r"^\[generate\]"):
        generate_for_video(video(), "rhyming", d)
