//! Built-in surrogate pools for realistic replacement text.

pub const GIVEN_NAMES: &[&str] = &[
    "Aaliyah", "Aaron", "Abigail", "Adam", "Adrian", "Aiden", "Aisha", "Alana", "Alberto",
    "Alejandro", "Alex", "Alexis", "Alice", "Alina", "Alma", "Amara", "Amelia", "Amir", "Ana",
    "Andre", "Andrea", "Angela", "Anika", "Anthony", "Arjun", "Aria", "Ariel", "Arthur",
    "Asher", "Astrid", "Aubrey", "Audrey", "Ava", "Ayla", "Beatrice", "Benjamin", "Bianca",
    "Blake", "Bodhi", "Brandon", "Brianna", "Bruno", "Caleb", "Camila", "Carla", "Carlos",
    "Carmen", "Caroline", "Cecilia", "Celeste", "Chandra", "Charles", "Chloe", "Clara", "Colin",
    "Connor", "Cora", "Daniel", "Daria", "Darius", "Dashiell", "Delia", "Desmond", "Diana",
    "Diego", "Dmitri", "Dolores", "Dominic", "Dylan", "Eamon", "Eden", "Edgar", "Edith",
    "Eduardo", "Elena", "Eli", "Elias", "Eliza", "Ella", "Emeka", "Emil", "Emma", "Enzo",
    "Eric", "Esme", "Esteban", "Ethan", "Eva", "Evelyn", "Ezra", "Fatima", "Felix", "Fern",
    "Fiona", "Flora", "Francesca", "Gabriel", "Gemma", "Georgia", "Gideon", "Giulia", "Grace",
    "Gwen", "Hana", "Hannah", "Harper", "Hassan", "Hazel", "Hector", "Helena", "Henry", "Hugo",
    "Ian", "Ibrahim", "Ida", "Imani", "Ines", "Ingrid", "Iris", "Isaac", "Isabel", "Ivan",
    "Jada", "Jamal", "Jasmine", "Javier", "Jonah", "Joaquin", "Jorge", "Josephine", "Jude",
    "Julia", "Julian", "Juniper", "Kai", "Kamala", "Karim", "Katya", "Keanu", "Kenji", "Kiara",
    "Laila", "Lars", "Layla", "Leah", "Leon", "Leonora", "Lila", "Lina", "Lionel", "Lorenzo",
    "Lucia", "Luis", "Luna", "Lydia", "Mabel", "Magnus", "Malik", "Marcus", "Margot", "Marisol",
    "Mateo", "Matilda", "Maya", "Mei", "Micah", "Milo", "Mira", "Miriam", "Nadia", "Naomi",
    "Nasir", "Nathan", "Nia", "Nico", "Nina", "Noah", "Nora", "Odette", "Olga", "Oliver",
    "Omar", "Orla", "Oscar", "Paloma", "Pablo", "Petra", "Philip", "Priya", "Quentin", "Rafael",
    "Rania", "Ravi", "Rebecca", "Reuben", "Rhea", "Rocco", "Rosa", "Rowan", "Ruby", "Rufus",
    "Sabrina", "Samir", "Santiago", "Sasha", "Selma", "Sergei", "Silas", "Simone", "Sofia",
    "Soren", "Stella", "Tariq", "Tatiana", "Teresa", "Thea", "Theo", "Tobias", "Uma", "Valeria",
    "Vera", "Victor", "Violet", "Wanda", "Wesley", "Willa", "Xavier", "Yara", "Yusuf", "Zadie",
    "Zara", "Zion",
];

pub const SURNAMES: &[&str] = &[
    "Abbott", "Acosta", "Adeyemi", "Aguilar", "Ahmed", "Alvarez", "Andersen", "Arnold",
    "Ashford", "Bailey", "Baker", "Banerjee", "Barnes", "Barrett", "Bauer", "Becker", "Bell",
    "Bennett", "Bishop", "Blackwood", "Bowen", "Boyd", "Bradley", "Brennan", "Brooks", "Burke",
    "Calloway", "Campbell", "Cardenas", "Carlsen", "Carter", "Castillo", "Chandler", "Chen",
    "Choi", "Clarke", "Cohen", "Coleman", "Collins", "Cortez", "Crane", "Cruz", "Dalton", "Das",
    "Davies", "Delgado", "Dixon", "Donovan", "Doyle", "Duarte", "Dunn", "Eaton", "Ellis",
    "Emerson", "Espinoza", "Evans", "Farrell", "Fernandez", "Figueroa", "Fischer", "Fitzgerald",
    "Fleming", "Flores", "Foster", "Fowler", "Franco", "Fraser", "Fuentes", "Gallagher",
    "Garrison", "Gill", "Goldberg", "Gomez", "Grant", "Greer", "Gupta", "Hale", "Hamilton",
    "Hansen", "Harding", "Hartley", "Hayes", "Henderson", "Herrera", "Hoffman", "Holland",
    "Hopkins", "Howell", "Hughes", "Ibarra", "Ingram", "Iqbal", "Jacobs", "Jensen", "Jimenez",
    "Joshi", "Kaplan", "Kato", "Keller", "Kennedy", "Khan", "Kim", "Kowalski", "Kramer",
    "Lambert", "Larsen", "Lawson", "Lindqvist", "Lloyd", "Lucero", "Lund", "Lynch", "Macias",
    "Madsen", "Maldonado", "Mancini", "Marsh", "Mathis", "Maxwell", "McCarthy", "Medina",
    "Mendoza", "Mercer", "Meyer", "Mills", "Miranda", "Molina", "Moreau", "Morrow", "Mueller",
    "Murphy", "Nakamura", "Navarro", "Nguyen", "Nielsen", "Novak", "Nowak", "Obi", "Okafor",
    "Olsen", "Ortega", "Osei", "Owens", "Pacheco", "Palmer", "Park", "Patel", "Pearson", "Pena",
    "Perkins", "Petrov", "Pierce", "Porter", "Quinn", "Rahman", "Ramirez", "Ramos", "Reyes",
    "Rhodes", "Richter", "Rivera", "Robles", "Rossi", "Rowe", "Russo", "Salazar", "Sandoval",
    "Santos", "Sato", "Schmidt", "Schneider", "Serrano", "Shah", "Shaw", "Silva", "Singh",
    "Sloan", "Soto", "Stein", "Sullivan", "Suzuki", "Tanaka", "Thornton", "Torres", "Tran",
    "Turner", "Underwood", "Valdez", "Vance", "Vargas", "Vasquez", "Vogel", "Wagner", "Walsh",
    "Ward", "Watts", "Weber", "Wells", "Whitaker", "Wolfe", "Wong", "Wright", "Xu", "Yamamoto",
    "Yang", "Yilmaz", "Young", "Zamora", "Zhang", "Ziegler", "Zimmerman", "Abernathy", "Alcott",
    "Bramley", "Cavanagh", "Darrow", "Ellery", "Fairbanks", "Galloway", "Hawthorne", "Kingsley",
    "Lockhart", "Merriweather", "Norwood", "Pemberton", "Radcliffe", "Stanhope", "Thistlewood",
    "Wexford",
];

pub const PLACES: &[&str] = &[
    "Maple Ridge", "Cedar Falls", "Lakeside", "Northfield", "Riverbend", "Stonebrook",
    "Willow Creek", "Harbor View", "Pine Hollow", "Eastwood", "Silver Lake", "Brookhaven",
    "Oak Valley", "Westmont", "Fairhaven", "Highland Park", "Clearwater", "Ashford",
    "Granite Bay", "Meadowvale", "Sunnyside", "Redwood", "Bayside", "Greenfield", "Hillcrest",
    "Elm Grove", "Foxborough", "Crescent City", "Summit Point", "Kingsport",
];

pub const EMAIL_DOMAINS: &[&str] = &["example.org", "example.edu", "mail.example.com", "example.net"];

pub const INSTITUTION_KINDS: &[&str] = &["University", "College", "Academy", "School", "Institute"];
