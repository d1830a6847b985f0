import string

_STRIP = str.maketrans("", "", string.punctuation)


def tokenize(sentence: str) -> list[str]:
    """Lowercase whitespace tokens; a word-final period becomes its own token,
    all other punctuation is dropped.

    >>> tokenize("This is a Bird.")
    ['this', 'is', 'a', 'bird', '.']
    """
    tokens = []
    for raw in sentence.lower().split():
        word = raw.translate(_STRIP)
        if word:
            tokens.append(word)
        if raw.endswith("."):
            tokens.append(".")
    return tokens


def detokenize(tokens) -> str:
    return " ".join(tokens)
