# Regenerates index.cdx.gz. Deterministic; run from this directory.
import gzip
import random
import string

rng = random.Random(226)
ALNUM = string.ascii_lowercase + string.digits
B64 = string.ascii_letters + string.digits + "-_"
seen = set()
lines = []


def ts(year):
    return "%04d%02d%02d%02d%02d%02d" % (
        year, rng.randint(1, 12), rng.randint(1, 28),
        rng.randint(0, 23), rng.randint(0, 59), rng.randint(0, 59))


def digest():
    return "".join(rng.choice(string.ascii_uppercase + "234567") for _ in range(32))


def row(url, t, status=200):
    path = url.split("youtube.com", 1)[1]
    return "com,youtube)%s %s %s text/html %d %s %d" % (
        path.lower(), t, url, status, digest(), rng.randint(2000, 90000))


def add(url, year, status=200):
    while True:
        t = ts(year)
        key = (url.split("://", 1)[1].replace("www.", ""), t)
        if key not in seen:
            seen.add(key)
            lines.append(row(url, t, status))
            return url, t


def user():
    return "".join(rng.choice(ALNUM) for _ in range(rng.randint(4, 14)))


def chan():
    return "UC" + "".join(rng.choice(B64) for _ in range(22))


users = [user() for _ in range(150)]
kept = []
for _ in range(226):
    kept.append(add("http://www.youtube.com/user/" + rng.choice(users), 2006))
users13 = [user() for _ in range(1400)]
for _ in range(3210):
    kept.append(add("http://www.youtube.com/user/" + rng.choice(users13), 2013))
chans = [chan() for _ in range(90)]
for _ in range(178):
    kept.append(add("http://www.youtube.com/channel/" + rng.choice(chans), 2013))

# noise: same capture under another spelling of the URL
for url, t in rng.sample(kept, 30):
    lines.append(row(url.replace("http://www.", "https://"), t))
# noise: non-200 statuses
for _ in range(40):
    year = rng.choice([2006, 2013])
    add("http://www.youtube.com/user/" + user(), year, rng.choice([301, 302, 404, 503]))
# noise: outside the channel prefixes
for _ in range(25):
    add("http://www.youtube.com/watch?v=" + "".join(rng.choice(B64) for _ in range(11)), 2006)
# noise: before the year range
for _ in range(20):
    add("http://www.youtube.com/user/" + user(), 2005)
lines += ["com,youtube)/user/broken 2006", "not a cdx line", "com,youtube)/user/x 20061301000000 http://www.youtube.com/user/x text/html 200 AAAA 1"]

rng.shuffle(lines)
with gzip.GzipFile("index.cdx.gz", "wb", mtime=0) as f:
    f.write(("\n".join(lines) + "\n").encode())
