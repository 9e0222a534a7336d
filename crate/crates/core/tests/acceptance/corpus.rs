//! Realistic model outputs with their hand-annotated readings.

pub enum Expect {
    Questions(&'static [&'static str]),
    NoQuestions,
    Confident(usize),
    Unsure,
}

pub enum Space {
    None,
    Vcr,
    Snli,
}

pub struct Item {
    pub text: &'static str,
    pub space: Space,
    pub expect: Expect,
    pub analysis: Option<&'static str>,
}

const fn q(text: &'static str, qs: &'static [&'static str]) -> Item {
    Item { text, space: Space::None, expect: Expect::Questions(qs), analysis: None }
}

const fn vcr(text: &'static str, expect: Expect) -> Item {
    Item { text, space: Space::Vcr, expect, analysis: None }
}

const fn snli(text: &'static str, expect: Expect) -> Item {
    Item { text, space: Space::Snli, expect, analysis: None }
}

pub const VCR_CHOICES: [&str; 4] = [
    "They are on a date.",
    "They are coworkers.",
    "They are siblings.",
    "They just got married.",
];

use Expect::{Confident, NoQuestions, Unsure};

pub fn items() -> Vec<Item> {
    vec![
        // questioner output
        q(
            "1. What is the man wearing?\n2. Where is the woman standing?\n3. Is anyone smiling?",
            &["What is the man wearing?", "Where is the woman standing?", "Is anyone smiling?"],
        ),
        q(
            "Sure! Here are some sub-questions:\n1. What color is the car?\n2. Is the dog next to the car?",
            &["What color is the car?", "Is the dog next to the car?"],
        ),
        q("- What is the person holding?\n- Is it raining?", &["What is the person holding?", "Is it raining?"]),
        q("* Who is in the picture?\n* What time of day is it?", &["Who is in the picture?", "What time of day is it?"]),
        q(
            "Sub-question 1: What is the child doing?\nSub-question 2: Is the child indoors?",
            &["What is the child doing?", "Is the child indoors?"],
        ),
        q("Q1: Where are they?\nQ2: What are they wearing?", &["Where are they?", "What are they wearing?"]),
        q("1) What is on the table?\n2) Is the table wooden?", &["What is on the table?", "Is the table wooden?"]),
        q("1. What is the man doing\n2. Is he outside", &["What is the man doing?", "Is he outside?"]),
        q("What is the weather like?\nIs the street wet?", &["What is the weather like?", "Is the street wet?"]),
        q(
            "Here are my questions.\nWhat is the woman holding?\nWhy is she smiling?",
            &["What is the woman holding?", "Why is she smiling?"],
        ),
        q(
            "1. What is the dog doing?\n2. what is the dog doing?\n3. Is the dog brown?",
            &["What is the dog doing?", "Is the dog brown?"],
        ),
        q(
            "1. Who is there?\n2. Where is this?\n3. Is it day?\n4. Is it raining?\n5. What is the man holding?\n6. Why is he running?\n7. How many people are there?",
            &["Who is there?", "Where is this?", "Is it day?", "Is it raining?", "What is the man holding?"],
        ),
        q(
            "1. **What is the man wearing?**\n2. **Is he at a wedding?**",
            &["What is the man wearing?", "Is he at a wedding?"],
        ),
        q("1. \"What is the boy holding?\"", &["What is the boy holding?"]),
        q(
            "1. What color is the bus?\nAlso, is it daytime?\n2. Is the bus moving?",
            &["What color is the bus?", "Is the bus moving?"],
        ),
        q("1.   What   is the   cat   doing?", &["What is the cat doing?"]),
        q("\u{2022} Is the light on?\n\u{2022} Who is driving?", &["Is the light on?", "Who is driving?"]),
        q("1. The man's clothes.\n2. What is he carrying?", &["What is he carrying?"]),
        q("1. Is it night?\r\n2. Are the lights on?\r\n", &["Is it night?", "Are the lights on?"]),
        q(
            "1. What is the girl eating?\n2. Where is she sitting?\nThese questions will help determine the answer.",
            &["What is the girl eating?", "Where is she sitting?"],
        ),
        q(
            "Question 1. How many people are there?\nQuestion 2. Are they dancing?",
            &["How many people are there?", "Are they dancing?"],
        ),
        q("1.What is the man holding?", &["What is the man holding?"]),
        Item { text: "I cannot generate questions for this image.", space: Space::None, expect: NoQuestions, analysis: None },
        Item { text: "", space: Space::None, expect: NoQuestions, analysis: None },
        // reasoner output, four choices
        Item {
            text: "Analysis: The people wear formal clothes and hold rings. Answer: 4",
            space: Space::Vcr,
            expect: Confident(3),
            analysis: Some("Analysis: The people wear formal clothes and hold rings."),
        },
        vcr("We are not sure which choice is correct. Still unknown: whether they are related.", Unsure),
        vcr("The man and woman are smiling at each other over dinner. The answer is 1.", Confident(0)),
        vcr("Based on the sub-answers, the answer is (b).", Confident(1)),
        vcr("Final answer: option 3", Confident(2)),
        vcr("The evidence points to choice 2 since they are in an office.", Confident(1)),
        vcr("They just got married.", Confident(3)),
        vcr("It could be (1) or (4); the clues are mixed.", Unsure),
        vcr("We are not sure. Though the answer is 3 seems plausible.", Unsure),
        vcr("I'm not sure, but maybe answer 2.", Unsure),
        vcr("The sub-answers describe a wedding reception, so the answer would be 4.", Confident(3)),
        vcr("Answer: (a)", Confident(0)),
        vcr("answer: d.", Confident(3)),
        vcr("Nothing in the evidence identifies the relationship.", Unsure),
        vcr("", Unsure),
        vcr("The answer is 7.", Unsure),
        vcr("The answerer said \"not sure\" about the rings, yet the answer is 4.", Confident(3)),
        vcr("Sub-answer 2: I am not sure.\nGiven the other evidence, the answer is 2.", Confident(1)),
        vcr("Since both wear matching rings and a veil, answer (d).", Confident(3)),
        vcr("Answer: 2. They are coworkers.", Confident(1)),
        vcr("The answer is 2, although choice 3 was considered.", Confident(1)),
        vcr("The answer is 1. On reflection the answer is 3.", Unsure),
        vcr("Option (c) fits best.", Confident(2)),
        vcr("Therefore, choice number 2 is correct.", Confident(1)),
        vcr("After weighing the clues, the answer is B", Confident(1)),
        Item {
            text: "- The man holds a ring.\n- The woman wears a veil.\nAnswer: 4",
            space: Space::Vcr,
            expect: Confident(3),
            analysis: Some("- The man holds a ring.\n- The woman wears a veil."),
        },
        // reasoner output, entailment labels
        snli("The image shows a dog on grass, so the hypothesis is entailed. Answer: entailment", Confident(0)),
        snli("The caption contradicts the hypothesis. Contradiction.", Confident(2)),
        snli("There is no information about the weather, so the relation is neutral.", Confident(1)),
        snli("We are not sure whether this is entailment or contradiction.", Unsure),
        snli("It might be entailment or neutral.", Unsure),
        snli("Answer: 3", Confident(2)),
        snli("Final answer: Neutral", Confident(1)),
        snli("The hypothesis does not follow from the image.", Unsure),
        snli("The man is clearly sleeping, which contradicts the claim that he is running.", Confident(2)),
        snli("Entailment.", Confident(0)),
    ]
}
