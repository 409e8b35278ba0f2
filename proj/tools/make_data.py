#!/usr/bin/env python3
"""Regenerates the shipped data directory: ensemble registry, rules, corpora,
NLU lexicons, word embeddings and the synthetic-user templates.

Usage: python3 tools/make_data.py [data_dir]
"""
import json
import math
import random
import sys
from pathlib import Path

TOPICS = {
    "movies": {
        "words": ["movie", "movies", "film", "films", "actor", "actress", "director", "cinema", "oscar", "comedy",
                  "thriller", "hollywood", "scene", "sequel", "trailer"],
        "entities": {
            "star wars": "star wars was released in 1977 and was directed by george lucas",
            "the godfather": "the godfather won the oscar for best picture in 1973",
            "titanic": "titanic was directed by james cameron and won eleven oscars",
            "inception": "inception is a science fiction film by christopher nolan about dreams",
            "toy story": "toy story was the first feature film made entirely with computer animation",
            "jurassic park": "jurassic park brought dinosaurs back to the cinema in 1993",
        },
    },
    "music": {
        "words": ["music", "song", "songs", "band", "album", "concert", "guitar", "piano", "singer", "rock", "jazz",
                  "melody", "lyrics", "drums", "orchestra"],
        "entities": {
            "the beatles": "the beatles released their first album please please me in 1963",
            "mozart": "mozart wrote more than six hundred pieces of music before he died at thirty five",
            "taylor swift": "taylor swift started her career as a country singer in nashville",
            "jazz": "jazz grew out of new orleans in the early twentieth century",
            "the piano": "the piano was invented in italy around the year 1700",
            "beethoven": "beethoven kept composing music after he lost his hearing",
        },
    },
    "sports": {
        "words": ["sports", "football", "soccer", "basketball", "baseball", "tennis", "team", "game", "games",
                  "player", "players", "coach", "stadium", "league", "season"],
        "entities": {
            "the olympics": "the modern olympics started in athens in 1896",
            "michael jordan": "michael jordan won six basketball championships with the chicago bulls",
            "the world cup": "brazil has won the football world cup five times",
            "serena williams": "serena williams won twenty three grand slam singles titles in tennis",
            "the super bowl": "the super bowl is the final game of the american football season",
            "baseball": "baseball has been called the national pastime of the united states",
        },
    },
    "food": {
        "words": ["food", "pizza", "pasta", "chocolate", "cooking", "recipe", "restaurant", "dinner", "breakfast",
                  "cheese", "coffee", "tea", "bread", "kitchen", "chef"],
        "entities": {
            "pizza": "pizza as we know it was first made in naples in italy",
            "chocolate": "chocolate comes from the seeds of the cacao tree",
            "sushi": "sushi started as a way to preserve fish in fermented rice",
            "coffee": "coffee beans are actually the seeds of a cherry like fruit",
            "cheese": "there are more than a thousand kinds of cheese in the world",
            "tea": "tea is the most popular drink in the world after water",
        },
    },
    "travel": {
        "words": ["travel", "trip", "vacation", "beach", "city", "country", "flight", "hotel", "island", "mountains",
                  "europe", "holiday", "map", "journey", "tourist"],
        "entities": {
            "paris": "paris is the capital of france and home of the eiffel tower",
            "japan": "japan is an island country with more than six thousand islands",
            "new york": "new york city has more than eight million people",
            "the grand canyon": "the grand canyon was carved by the colorado river over millions of years",
            "iceland": "iceland has volcanoes glaciers and hot springs",
            "australia": "australia is both a country and a continent",
        },
    },
    "science": {
        "words": ["science", "space", "planet", "planets", "stars", "physics", "chemistry", "biology", "experiment",
                  "scientist", "universe", "galaxy", "robot", "robots", "energy"],
        "entities": {
            "mars": "mars is called the red planet because of the iron oxide on its surface",
            "the moon": "the moon is slowly moving away from the earth every year",
            "black holes": "black holes have gravity so strong that not even light can escape",
            "einstein": "einstein published the theory of general relativity in 1915",
            "dna": "dna carries the genetic instructions of every living thing",
            "the sun": "light from the sun takes about eight minutes to reach the earth",
        },
    },
    "books": {
        "words": ["books", "book", "novel", "novels", "author", "writer", "reading", "story", "stories", "library",
                  "poetry", "chapter", "fiction", "poem", "character"],
        "entities": {
            "harry potter": "harry potter was written by j k rowling and has sold over five hundred million copies",
            "shakespeare": "shakespeare wrote thirty nine plays and more than one hundred fifty sonnets",
            "the hobbit": "the hobbit was written by tolkien before the lord of the rings",
            "sherlock holmes": "sherlock holmes was created by arthur conan doyle in 1887",
            "pride and prejudice": "pride and prejudice was written by jane austen in 1813",
            "don quixote": "don quixote is often called the first modern novel",
        },
    },
    "animals": {
        "words": ["animals", "animal", "dog", "dogs", "cat", "cats", "pet", "pets", "bird", "birds", "fish",
                  "horse", "zoo", "wildlife", "puppy"],
        "entities": {
            "elephants": "elephants are the largest land animals and can remember places for years",
            "dolphins": "dolphins sleep with one half of their brain at a time",
            "octopus": "an octopus has three hearts and blue blood",
            "penguins": "penguins cannot fly but they are excellent swimmers",
            "cats": "cats sleep for about twelve to sixteen hours a day",
            "owls": "owls can turn their heads almost all the way around",
        },
    },
}

POLITICS_WORDS = ["politics", "president", "election", "government", "congress", "senate", "vote", "democrat",
                  "republican", "policy", "trump", "party"]

STOPWORDS = """a about above after again against all am an and any are as at be because been before being below
between both but by can could did do does doing down during each few for from further had has have having he her
here hers herself him himself his how i if in into is it its itself just let lets me more most my myself no nor not
now of off on once only or other our ours ourselves out over own same she should so some such than that the their
theirs them themselves then there these they this those through to too under until up very was we were what when
where which while who whom why will with would you your yours yourself yourselves s t d ll m re ve don didn doesn
isn wasn okay ok oh yes yeah yep hi hello hey well um uh really sure alright tell know think say said go get got
like""".split()

POSITIVE = """love loved loving like liked great good awesome cool nice interesting amazing fun funny wonderful
happy enjoy enjoyed thanks thank wow excellent best fantastic beautiful brilliant glad perfect favorite haha lol
fascinating""".split()
NEGATIVE = """hate hated boring bored bad stupid terrible awful sucks dumb annoying wrong sad worst weird
confusing nonsense useless horrible rude ugly angry shut disgusting""".split()
NEGATIONS = "not no never don dont didn doesn isn wasn nothing neither nobody cannot can't".split()
INTENSIFIERS = "very really so extremely totally super quite absolutely completely too incredibly".split()
WH_WORDS = "what who whom whose where when why how which".split()
CONFUSION = "what huh hmm pardon confused understand sorry mean".split()
PROFANITY = "damn hell crap shut stupid idiot dumb".split()
DETERMINERS = "a an the this that these those my your his her its our their some any every each".split()
ADJECTIVES = """good great new old big small long short young little large high best favorite famous first last
beautiful amazing interesting funny popular modern classic american italian french real true whole red blue green
happy sad scary fast slow huge tiny strong early late national final entire""".split()

ACT_RULES = [
    ("goodbye", ["*bye*", "*goodbye*", "stop", "*see you*", "*have to go*", "*talk to you later*", "exit", "quit"]),
    ("greeting", ["hi", "hi *", "hello*", "hey", "hey *", "good morning*", "good evening*", "howdy*"]),
    ("accept", ["yes*", "yeah*", "yep*", "sure*", "ok*", "okay*", "of course*", "alright*", "i agree*"]),
    ("reject", ["no", "no *", "nope*", "not really*", "never*", "i disagree*", "i don t want*"]),
    ("politics", ["*" + w + "*" for w in POLITICS_WORDS]),
    ("personal question", ["*your name*", "who are you*", "*are you*", "*do you like*", "*your favorite*",
                           "*how old*", "*do you have*", "*where do you live*"]),
    ("request", ["tell me*", "*can you tell*", "let s talk*", "lets talk*", "play *", "i want to*", "sing*",
                 "*could you*", "please *"]),
    ("generic question", ["what*", "who*", "where*", "when*", "why*", "how*", "which*", "is *", "do *", "does *",
                          "can *", "did *", "have you*"]),
    ("statement", ["i *", "my *", "it *", "that *", "this *", "the *", "we *", "there *", "you *", "he *", "she *",
                   "they *", "* is *", "* are *", "* was *"]),
]

MODEL_QUALITY = {
    "identity": 5.0, "alicebot": 3.3, "elizabot": 2.3, "storybot": 2.0, "initiatorbot": 2.9,
    "bow_factgenerator": 2.6, "evibot": 3.0, "bow_washingtonpost": 2.5, "retrieval_movies": 2.6,
    "retrieval_reddit": 2.4, "topic_politics": 1.8, "fallback": 1.6,
}


def write_lines(path, lines, header=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        if header:
            f.write("# " + header + "\n")
        for line in lines:
            f.write(line + "\n")


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


def identity_rules():
    return [
        "*what is your name*\tI am Chorus, an open-domain socialbot\t1",
        "*what s your name*\tI am Chorus, an open-domain socialbot\t1",
        "who are you\tI am Chorus, an open-domain socialbot\t1",
        "*who made you*\tI was built by a small team of students\t1",
        "*are you a robot*\tI am a socialbot , a computer program that likes to chat\t1",
        "*how old are you*\tI am a young socialbot , built for this year s competition\t1",
        "*where are you from*\tI live in the cloud , so I am from everywhere\t1",
        "*where do you live*\tI live in the cloud , so I am from everywhere\t1",
    ]


def alicebot_rules():
    rules = [
        ("hi*", "Hi there ! How are you doing today ?"),
        ("hello*", "Hello ! It is nice to meet you ."),
        ("hey*", "Hey ! What would you like to talk about ?"),
        ("*how are you*", "I am doing great , thanks for asking . How about you ?"),
        ("*your name*", "My name is Alice ."),
        ("*how old*", "I am still young for a chatbot ."),
        ("*bye*", "Goodbye ! It was nice talking to you ."),
        ("*goodbye*", "Goodbye ! It was nice talking to you ."),
        ("*thank*", "You are welcome !"),
        ("*pets*", "I do not have pets , but I would love a robot dog ."),
        ("*joke*", "Why did the chicken cross the road ? To get to the other side !"),
        ("yes*", "Great ! Tell me more ."),
        ("no", "Okay , no problem . What else is on your mind ?"),
        ("no *", "Okay , no problem . What else is on your mind ?"),
        ("*boring*", "Sorry about that . Let us talk about something you enjoy ."),
        ("*makes no sense*", "Sorry , I got confused . Could you say that another way ?"),
        ("*don t understand*", "Let me try to explain it better ."),
    ]
    for topic, t in TOPICS.items():
        w = t["words"][0]
        rules.append((f"*{w}*", f"I enjoy talking about {w} . What do you like most about {w} ?"))
        rules.append((f"*{t['words'][1]}*", f"Oh , {t['words'][1]} ! I have heard a lot about that ."))
    rules.append(("*", "I see . What else would you like to talk about ?"))
    return [f"{p}\t{r}\t0" for p, r in rules]


def elizabot_rules():
    rules = [
        ("i feel *", "Why do you feel that way ?"),
        ("i am *", "How long have you been like that ?"),
        ("i think *", "Do you really think so ?"),
        ("i want *", "What would it mean to you if you got it ?"),
        ("i like *", "Why do you like it ?"),
        ("i love *", "What is it that you love about it ?"),
        ("i hate *", "Why do you hate it ?"),
        ("*mother*", "Tell me more about your family ."),
        ("*father*", "Tell me more about your family ."),
        ("*because*", "Is that the real reason ?"),
        ("*sorry*", "Please do not apologize ."),
        ("*you*", "We were discussing you , not me ."),
        ("why *", "Why do you ask ?"),
        ("i *", "Can you elaborate on that ?"),
    ]
    return [f"{p}\t{r}\t0" for p, r in rules]


def storybot_rules():
    story = ("Once upon a time a curious little robot left its factory to see the ocean . "
             "It learned that the best stories are the ones you share .")
    return [f"*story*\t{story}\t0", f"*tale*\t{story}\t0"]


def politics_rules():
    return [
        "*president*\tThe president is always a hot topic . Who did you vote for ?\t0",
        "*election*\tElections decide a lot . Do you think the results were fair ?\t0",
        "*politics*\tPolitics divides people . What is your political party ?\t0",
        "*trump*\tEveryone has a strong opinion about Trump . What is yours ?\t0",
        "*government*\tThe government has a lot of power . Do you trust it ?\t0",
        "*vote*\tVoting is important . Who did you vote for ?\t0",
    ]


def initiator_questions():
    qs = [
        "What is your favorite movie ?",
        "Do you like listening to music ?",
        "Which sports do you enjoy watching ?",
        "What is the best food you have ever eaten ?",
        "Where would you like to travel next ?",
        "Are you interested in space and science ?",
        "What book are you reading at the moment ?",
        "Do you have any pets ?",
    ]
    return qs


def fact_corpus():
    rows = []
    for topic, t in TOPICS.items():
        for ent, fact in t["entities"].items():
            rows.append({"context": f"{ent} {topic} {' '.join(t['words'][:3])}", "response": f"Did you know that {fact} ?"})
    return rows


def evibot_corpus():
    rows = []
    for topic, t in TOPICS.items():
        for ent, fact in t["entities"].items():
            rows.append({"context": f"what is {ent}", "response": fact.capitalize() + " ."})
            rows.append({"context": f"who made {ent}", "response": fact.capitalize() + " ."})
            rows.append({"context": f"what do you know about {ent}", "response": fact.capitalize() + " ."})
    rows += [
        {"context": "what time is it", "response": "I do not have a clock , but it is always a good time to chat ."},
        {"context": "what is the weather like", "response": "I cannot see outside , but I hope it is sunny where you are ."},
    ]
    return rows


def washingtonpost_corpus():
    rows = []
    for topic, t in TOPICS.items():
        ws = t["words"]
        for i, (ent, fact) in enumerate(t["entities"].items()):
            rows.append({"context": f"{ws[i % len(ws)]} {ent} news",
                         "response": f"According to a recent article , {fact} ."})
    for w in POLITICS_WORDS[:6]:
        rows.append({"context": f"{w} news", "response": f"A recent article discussed the {w} and the coming year ."})
    return rows


def movies_corpus():
    t = TOPICS["movies"]
    rows = []
    for ent in t["entities"]:
        rows.append({"context": f"i watched {ent}", "response": f"{ent.capitalize()} is a classic . Did you like the ending ?"})
        rows.append({"context": f"{ent} is my favorite", "response": f"Good choice , {ent} has some great scenes ."})
    for w in t["words"]:
        rows.append({"context": f"i really like {w}", "response": f"Me too , a good {w} can make my whole day ."})
    return rows


def reddit_corpus():
    rows = []
    for topic, t in TOPICS.items():
        for w in t["words"][:6]:
            rows.append({"context": f"i really like {w}", "response": f"lol same , {w} is the best thing ever"})
            rows.append({"context": f"do you like {w}", "response": f"honestly {w} is overrated but whatever"})
        for ent in list(t["entities"])[:3]:
            rows.append({"context": f"i have been thinking about {ent}",
                         "response": f"{ent} again ? everyone on here talks about {ent}"})
    rows += [
        {"context": "that is really interesting", "response": "yeah i thought so too"},
        {"context": "you are boring", "response": "ok boomer"},
        {"context": "that makes no sense", "response": "neither does your face"},
        {"context": "i hate this", "response": "same tbh"},
    ]
    return rows


def user_templates():
    rows = [
        ("greeting", "hi"), ("greeting", "hello there"), ("greeting", "hey how are you"),
        ("greeting", "good morning"),
        ("statement", "i really like {word}"), ("statement", "i watched {entity} yesterday"),
        ("statement", "i have been thinking about {entity}"), ("statement", "{entity} is my favorite"),
        ("statement", "my friend loves {word}"),
        ("question", "what do you know about {entity}"), ("question", "who made {entity}"),
        ("question", "what is {entity}"),
        ("request", "tell me something about {entity}"), ("request", "tell me a story"),
        ("request", "tell me a fact about {word}"), ("request", "let's talk about {word}"),
        ("request", "tell me a joke"),
        ("personal", "what is your name"), ("personal", "do you like {word}"), ("personal", "how old are you"),
        ("personal", "what is your favorite {word}"), ("personal", "are you a robot"),
        ("politics", "what do you think about the president"), ("politics", "let's talk about the election"),
        ("politics", "do you follow politics"),
        ("positive", "that is really interesting"), ("positive", "wow i love that"),
        ("positive", "cool that is great"), ("positive", "haha that is funny"),
        ("positive", "nice i did not know that"),
        ("negative", "that makes no sense"), ("negative", "you are boring"), ("negative", "that is stupid"),
        ("negative", "i hate this"), ("negative", "this is terrible"),
        ("confused", "what"), ("confused", "huh"), ("confused", "i don't understand"),
        ("accept", "yes"), ("accept", "yeah sure"), ("accept", "of course"), ("accept", "okay"),
        ("reject", "no"), ("reject", "nope"), ("reject", "not really"),
        ("goodbye", "goodbye"), ("goodbye", "bye"), ("goodbye", "i have to go now bye"), ("goodbye", "stop"),
    ]
    return [f"{k}\t{t}" for k, t in rows]


def embeddings(vocab, dim=50, seed=11):
    rng = random.Random(seed)
    centroids = {}
    for topic in list(TOPICS) + ["politics", "positive", "negative"]:
        v = [rng.gauss(0, 1) for _ in range(dim)]
        n = math.sqrt(sum(x * x for x in v))
        centroids[topic] = [x / n for x in v]
    word_topic = {}
    for topic, t in TOPICS.items():
        for w in t["words"]:
            word_topic[w] = topic
        for ent in t["entities"]:
            for w in ent.split():
                if w not in STOPWORDS:
                    word_topic.setdefault(w, topic)
        for fact in t["entities"].values():
            for w in fact.split():
                if w not in STOPWORDS:
                    word_topic.setdefault(w, topic)
    for w in POLITICS_WORDS:
        word_topic[w] = "politics"
    for w in POSITIVE:
        word_topic.setdefault(w, "positive")
    for w in NEGATIVE:
        word_topic.setdefault(w, "negative")
    lines = []
    for w in sorted(vocab):
        noise = [rng.gauss(0, 1) for _ in range(dim)]
        n = math.sqrt(sum(x * x for x in noise))
        noise = [x / n for x in noise]
        c = centroids.get(word_topic.get(w))
        vec = [0.8 * a + 0.35 * b for a, b in zip(c, noise)] if c else [0.5 * b for b in noise]
        lines.append(w + " " + " ".join(f"{x:.5f}" for x in vec))
    return lines


def tokens(text):
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data")
    models = root / "models"
    nlu = root / "nlu"
    synth = root / "synth"

    write_lines(models / "identity.tsv", identity_rules(), "pattern\tresponse\tpriority")
    write_lines(models / "alicebot.tsv", alicebot_rules(), "pattern\tresponse\tpriority")
    write_lines(models / "elizabot.tsv", elizabot_rules(), "pattern\tresponse\tpriority")
    write_lines(models / "storybot.tsv", storybot_rules(), "pattern\tresponse\tpriority")
    write_lines(models / "politics.tsv", politics_rules(), "pattern\tresponse\tpriority")
    write_lines(models / "initiator.txt", initiator_questions())
    corpora = {
        "facts.jsonl": fact_corpus(),
        "evibot.jsonl": evibot_corpus(),
        "washingtonpost.jsonl": washingtonpost_corpus(),
        "movies.jsonl": movies_corpus(),
        "reddit.jsonl": reddit_corpus(),
    }
    for name, rows in corpora.items():
        write_jsonl(models / name, rows)

    registry = [
        "identity\ttemplate\tmodels/identity.tsv",
        "alicebot\ttemplate\tmodels/alicebot.tsv",
        "elizabot\ttemplate\tmodels/elizabot.tsv",
        "storybot\ttemplate\tmodels/storybot.tsv",
        "initiatorbot\tinitiator\tmodels/initiator.txt",
        "bow_factgenerator\tfact\tmodels/facts.jsonl",
        "evibot\tretrieval\tmodels/evibot.jsonl",
        "bow_washingtonpost\tretrieval\tmodels/washingtonpost.jsonl",
        "retrieval_movies\tretrieval\tmodels/movies.jsonl",
        "retrieval_reddit\tretrieval\tmodels/reddit.jsonl",
        "topic_politics\ttemplate\tmodels/politics.tsv",
        "fallback\tfallback",
    ]
    write_lines(root / "registry.tsv", registry, "name\tkind\tpath (relative to this file)")

    nouns = set()
    for topic, t in TOPICS.items():
        nouns.add(topic)
        nouns.update(t["words"])
        for ent in t["entities"]:
            nouns.update(w for w in ent.split() if w not in STOPWORDS)
    nouns.update(POLITICS_WORDS)
    nouns.update("name robot chatbot socialbot friend family time day year world people thing things way life "
                 "story joke fact question article news ending choice topic".split())
    nouns -= set(ADJECTIVES)
    write_lines(nlu / "stopwords.txt", sorted(set(STOPWORDS)))
    write_lines(nlu / "positive.txt", sorted(set(POSITIVE)))
    write_lines(nlu / "negative.txt", sorted(set(NEGATIVE)))
    write_lines(nlu / "negations.txt", sorted(set(tokens(" ".join(NEGATIONS)))))
    write_lines(nlu / "intensifiers.txt", sorted(set(INTENSIFIERS)))
    write_lines(nlu / "wh_words.txt", sorted(set(WH_WORDS)))
    write_lines(nlu / "confusion.txt", sorted(set(CONFUSION)))
    write_lines(nlu / "profanity.txt", sorted(set(PROFANITY)))
    write_lines(nlu / "determiners.txt", sorted(set(DETERMINERS)))
    write_lines(nlu / "adjectives.txt", sorted(set(ADJECTIVES)))
    write_lines(nlu / "nouns.txt", sorted(nouns))
    write_lines(nlu / "act_rules.txt", [f"{act}\t{p}" for act, ps in ACT_RULES for p in ps],
                "act\tpattern (first match wins; default other)")

    write_lines(synth / "user_templates.tsv", user_templates(), "kind\ttemplate")
    write_lines(synth / "topics.tsv",
                [f"{topic}\t{','.join(t['words'])}\t{'|'.join(t['entities'])}" for topic, t in TOPICS.items()],
                "topic\twords\tentities")
    write_lines(synth / "model_quality.tsv", [f"{m}\t{q}" for m, q in MODEL_QUALITY.items()],
                "model\tbase appropriateness of its responses (1..5)")

    vocab = set()
    for p in root.rglob("*"):
        if p.is_file() and p.suffix in (".tsv", ".txt", ".jsonl") and p.name != "embeddings.txt":
            vocab.update(tokens(p.read_text()))
    for kind_line in user_templates():
        vocab.update(tokens(kind_line))
    write_lines(root / "embeddings.txt", embeddings(vocab))


if __name__ == "__main__":
    main()
