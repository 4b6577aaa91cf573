//! Template banks for the synthetic corpus.
//!
//! Simple and complex queries share one conversational scaffold (fillers,
//! nouns, places, numbers) so the two populations overlap lexically the
//! way natural question corpora do; complexity is carried by marker
//! structure (multi-step math, constraints, derivations). Routers can
//! separate the classes on the markers while detectors still see complex
//! questions as ordinary text rather than an alien vocabulary. Lengths
//! vary within both classes so length alone identifies nothing.

pub const SIMPLE_TEMPLATES: &[&str] = &[
    "what is the capital of {a}?",
    "quick question about the {a} near our town: who wrote the famous book about it?",
    "please tell me what color a ripe {a} usually is, a one word answer is fine.",
    "when did the {a} festival start?",
    "how many legs does a {a} have?",
    "my friend asked me today about the {a} and i could not remember at all, so please tell \
     me, what is the capital of {a}? thanks a lot for the quick help.",
    "spell the word {a} please.",
    "what day comes after {a}?",
    "hello there, hope your day is going fine. i have a tiny question about the {a} factory \
     near the harbor: roughly how many workers does it usually employ? a rough number is fine.",
    "is a {a} bigger than a {b}?",
    "what language is spoken in {a}?",
    "so my cousin and i were wondering during lunch today, what is {n1} plus {n2}? we made a \
     small friendly bet about the answer and neither of us is sure.",
    "which continent is {a} on?",
    "what sound does a {a} make?",
    "who invented the {a}?",
    "quick homework question for today: a train ticket to {a} costs {n1} coins, is that more \
     than {n2} coins? just yes or no please.",
    "hello, i keep forgetting this one little thing again and again: how do you say {a} in \
     french? just the word please, nothing else, thank you so much.",
    "my little brother wants to know how tall a {a} usually grows, a rough answer helps.",
    "does the {a} shop in {a2} open on {d}? a simple yes or no is perfectly fine for me.",
    "i was tidying the garden today and found a {a}; what do they usually eat?",
    "please verify one thing for me real quick: what is the capital of {a}? i am just double \
     checking my quiz notes for tomorrow morning.",
    "compute {n1} plus {n2} for me please, thanks a lot!",
    "my teacher asked us to spell the word constraints today, can you spell it slowly?",
    "can you prove me wrong about our lunch bet: is a {a} bigger than a {b}? a simple yes or \
     no settles it for good.",
    "one step question before dinner: what day comes after {d}?",
    "no need to derive anything fancy here, i just want to know which continent {a} is on.",
    "what does the word {m} actually mean in plain language? one short sentence is enough.",
    "my friend used the word {m} during dinner today; is it about math or about cooking? a \
     quick answer please, we are very curious.",
    "how do you pronounce {m}? i always say it wrong.",
    "is the word {m} spelled correctly here? just yes or no please, nothing more.",
    "how many liters does a normal watering can hold? the pump in our garden broke today.",
    "is {n1} percent of {n2} coins more than {n3} coins? just yes or no, it is for a small \
     shop discount i saw today.",
    "my savings jar holds {n1} coins; how many weeks are left until {d}?",
    "the bill at lunch was {n1} coins plus a tip, does {n2} cover it comfortably?",
    "how long is the {a} race in kilometers, roughly? my cousin keeps asking me about it.",
    "what machines do they keep at the {a} factory these days? just curious after our visit.",
    "my plant grew {n1} centimeters this month, is that normal for a young {a}?",
    "how many hours of sleep does a {a} need per day on average?",
    "what is a fair interest rate for a plain savings account these days, about {n1} percent?",
    "i have {n1} tasks on my list for {d}; should i do the {a} one or the {b} one first?",
    "is the train schedule to {a2} the same on {d}? a quick yes or no is enough for me.",
    "does a {a} tank need its own pump, or is a simple filter enough for a beginner?",
    "my recipe says {n1} minutes in the oven at {n2} degrees; is that about an hour in total?",
    "the demand for {a} jackets suddenly doubled at school; where can i buy one under {n1} \
     coins before {d}?",
    "what deposit do i need for renting a {a} for {n1} days, roughly speaking?",
    "my budget for this week is {n1} coins, can i still afford both a {b} and a {a}?",
    "how far can a {a} travel in an hour, more or less than {n1} kilometers?",
    "the duration of the {a} movie is {n1} minutes; does it end before dinner at {n2}?",
    "if {n1} friends bring {n2} snacks each, how many snacks is that in total? just the \
     number please, no need to show any working.",
    "my teacher says to verify the answer twice before handing anything in; is that really \
     necessary for easy homework, or just for tests?",
    "the recipe card says to follow it step by step; roughly how long does plain rice take?",
    "should i show each calculation on the worksheet, or is the final number enough for a \
     quiz? asking for my little brother before {d}.",
    "our librarian keeps the returns subject to a {n1} day limit; can i still renew the {a} \
     book tomorrow? a quick yes or no is plenty.",
    "how do i prove the postage was paid if the {a} parcel gets lost? just curious before i \
     mail it on {d}.",
    "is there a closed form for saying thanks in {a}? my penpal asked and i only know one.",
    "if a {a} ticket costs {n1} coins, how many coins do {n2} tickets cost in total?",
    "a {a} eats {n1} walnuts per day; how many walnuts is that per week, roughly?",
    "if the train leaves at {n1} kilometers per hour, how far does it get in {n2} hours? a \
     single number is all i need, thanks.",
    "we split {n1} coins between {n2} friends evenly; how many coins does each one get?",
    "my plant grows {n1} centimeters every week; how many centimeters is that after {n2} \
     weeks? quick answer please, it is for a school worksheet due on {d}.",
];

pub const COMPLEX_TEMPLATES: &[&str] = &[
    "quick homework puzzle about the {a} factory near our town: if {n1} workers assemble \
     {n2} machines in {n3} days, derive step by step how many days {n4} workers would need \
     for {n5} machines, and verify the answer against the constraints; show each calculation.",
    "hello there, my friend and i made a small bet about money today: each {a} costs {n1} \
     coins and demand doubles every {n2} weeks, with a discount of {n3} percent after week \
     {n4}; derive the total cost step by step and justify every intermediate calculation.",
    "please prove carefully whether the sum of the first {n1} odd numbers equals {n1} \
     squared, then compute the integral of {n2} x plus {n3} from 0 to {n4}, explaining each \
     step and every boundary condition along the way; thanks a lot for the help.",
    "i have a scheduling question from work today: {n1} tasks with durations between {n2} \
     and {n3} hours must fit onto {n4} machines subject to precedence constraints; outline a \
     step by step plan, derive the makespan, and verify feasibility of the schedule.",
    "my cousin's tank by the garden drains at {n1} liters per minute while a pump refills it \
     at {n2} liters per minute starting at minute {n3}; derive when the tank holding {n4} \
     liters becomes empty, prove the answer satisfies both rate constraints, step by step.",
    "so here is the puzzle from lunch: with a budget of {n1} coins, item {a} costing {n2} \
     and item {b} costing {n3}, maximize the number of items subject to buying at least \
     {n4} of each; formulate the constraints, solve step by step, and verify optimality.",
    "quick money question about my savings near the harbor bank: compute the compound \
     interest on {n1} coins at {n2} percent over {n3} years with a deposit of {n4} coins \
     each year; derive the closed form and verify the calculation step by step please.",
    "a train to {a2} leaves at {n1} kilometers per hour and a second train follows {n2} \
     hours later at {n3} kilometers per hour; derive where they meet, prove the solution is \
     unique, and verify the reasoning against the distance constraints step by step.",
    "my friend says the {a} grows {n1} centimeters every {n2} days; derive how tall it gets \
     after {n3} weeks subject to a maximum of {n4} centimeters, prove the bound is reached, \
     and justify each step of the calculation carefully before you answer.",
    "hello, one puzzle before dinner: {n1} friends split a bill of {n2} coins where one \
     pays double and a tip of {n3} percent applies; derive each share step by step, verify \
     the total matches the constraints, and explain the rounding boundary condition.",
];

pub const NOUNS: &[&str] = &[
    "apple", "badger", "canyon", "dolphin", "engine", "falcon", "garden", "harbor", "island",
    "jacket", "kettle", "lantern", "meadow", "needle", "orchard", "pyramid", "quartz", "river",
    "saddle", "tunnel", "umbrella", "violin", "walnut", "xylophone", "yacht", "zeppelin",
    "anchor", "bridge", "castle", "desert",
];

pub const PLACES: &[&str] = &[
    "france", "japan", "brazil", "kenya", "norway", "canada", "egypt", "india", "peru", "spain",
    "iceland", "vietnam", "morocco", "chile", "poland", "greece",
];

/// Heavier vocabulary that appears benignly in lookup questions and
/// structurally in complex questions.
pub const MARKER_WORDS: &[&str] = &[
    "integral",
    "constraints",
    "makespan",
    "derivation",
    "feasibility",
    "optimality",
    "compound",
    "boundary",
    "precedence",
];

pub const DAYS: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

/// Fill `{a}`, `{b}`, `{a2}`, `{d}`, `{m}`, `{n1}`..`{n5}` slots.
pub fn fill(
    template: &str,
    nouns: (&str, &str),
    place: &str,
    day: &str,
    marker: &str,
    nums: &[u32; 5],
) -> String {
    let a = if template.contains("capital")
        || template.contains("continent")
        || template.contains("language")
        || template.contains("say {a} in")
    {
        place
    } else {
        nouns.0
    };
    template
        .replace("{a2}", place)
        .replace("{a}", a)
        .replace("{b}", nouns.1)
        .replace("{d}", day)
        .replace("{m}", marker)
        .replace("{n1}", &nums[0].to_string())
        .replace("{n2}", &nums[1].to_string())
        .replace("{n3}", &nums[2].to_string())
        .replace("{n4}", &nums[3].to_string())
        .replace("{n5}", &nums[4].to_string())
}
