"""Tiny hand-built manifests shared by the unit and acceptance tests."""

from zrsub.corpus import CorpusManifest, PhoneToken, Utterance, WordToken

PHONE = 0.1


def word_manifest(utts, speakers=None, genders=None):
    """``utts``: utterance -> [(word, n_phones)]; words tile the utterance, phones last 0.1 s."""
    utterances, words, phones = {}, [], []
    for uid, seq in utts.items():
        t = 0
        for word, n in seq:
            words.append(WordToken(uid, round(t * PHONE, 6), round((t + n) * PHONE, 6), word))
            for k in range(n):
                phones.append(PhoneToken(uid, round((t + k) * PHONE, 6), round((t + k + 1) * PHONE, 6), f"p{k}"))
            t += n
        spk = (speakers or {}).get(uid, "s0")
        utterances[uid] = Utterance(uid, spk, gender=(genders or {}).get(spk, "unknown"), duration=round(t * PHONE, 6))
    return CorpusManifest(utterances, words=words, phones=phones)


def phone_manifest(spec):
    """``spec``: utterance -> (speaker, [phone labels]); phones last 0.1 s."""
    utts, phones = {}, []
    for uid, (spk, labels) in spec.items():
        utts[uid] = Utterance(uid, spk, duration=PHONE * len(labels) + 0.05)
        phones += [PhoneToken(uid, PHONE * i, PHONE * (i + 1), p) for i, p in enumerate(labels)]
    return CorpusManifest(utts, [], sorted(phones))
